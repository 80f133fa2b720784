//! Single-parity `k`-of-`k+1` erasure code over chunk ciphertexts.
//!
//! Data stripes are contiguous slices of the chunk; the parity stripe is the
//! byte-wise XOR of all data stripes. Any `k` of the `k + 1` stripes recover
//! the chunk.

use thiserror::Error;

pub const DEFAULT_DATA_STRIPES: usize = 4;
pub const MIN_DATA_STRIPES: usize = 2;
pub const MAX_DATA_STRIPES: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ErasureError {
    #[error("buffer lengths differ: target {target}, source {source_len}")]
    LengthMismatch { target: usize, source_len: usize },
    #[error("data stripe count {0} outside {MIN_DATA_STRIPES}..={MAX_DATA_STRIPES}")]
    BadStripeCount(usize),
    #[error("chunk length {len} is not divisible by {k}")]
    Indivisible { len: usize, k: usize },
    #[error("need {needed} distinct stripes, have {have}")]
    InsufficientStripes { needed: usize, have: usize },
    #[error("stripe index {0} out of range")]
    BadIndex(u8),
}

/// XOR-accumulates `source` into `target`.
#[inline(never)]
pub fn parity(target: &mut [u8], source: &[u8]) -> Result<(), ErasureError> {
    if target.len() != source.len() {
        return Err(ErasureError::LengthMismatch { target: target.len(), source_len: source.len() });
    }
    // Fixed-width blocks let the compiler emit wide vector XORs.
    let mut t_blocks = target.chunks_exact_mut(64);
    let mut s_blocks = source.chunks_exact(64);
    for (t, s) in (&mut t_blocks).zip(&mut s_blocks) {
        for i in 0..64 {
            t[i] ^= s[i];
        }
    }
    for (t, s) in t_blocks.into_remainder().iter_mut().zip(s_blocks.remainder()) {
        *t ^= s;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripe {
    /// `0..k` are data stripes, `k` is parity.
    pub index: u8,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripeSet {
    pub k: usize,
    pub stripes: Vec<Stripe>,
}

impl StripeSet {
    pub fn total_bytes(&self) -> usize {
        self.stripes.iter().map(|s| s.bytes.len()).sum()
    }

    /// True when the parity stripe equals the XOR of the data stripes.
    pub fn parity_consistent(&self) -> bool {
        let Some(par) = self.stripes.iter().find(|s| s.index as usize == self.k) else {
            return false;
        };
        let mut acc = par.bytes.clone();
        for s in self.stripes.iter().filter(|s| (s.index as usize) < self.k) {
            if parity(&mut acc, &s.bytes).is_err() {
                return false;
            }
        }
        acc.iter().all(|&b| b == 0)
    }
}

fn check_k(k: usize) -> Result<(), ErasureError> {
    if !(MIN_DATA_STRIPES..=MAX_DATA_STRIPES).contains(&k) {
        return Err(ErasureError::BadStripeCount(k));
    }
    Ok(())
}

pub fn encode(chunk: &[u8], k: usize) -> Result<StripeSet, ErasureError> {
    check_k(k)?;
    if chunk.len() % k != 0 {
        return Err(ErasureError::Indivisible { len: chunk.len(), k });
    }
    let stripe_len = chunk.len() / k;
    let mut stripes: Vec<Stripe> = Vec::with_capacity(k + 1);
    let mut par = vec![0u8; stripe_len];
    for (i, data) in chunk.chunks_exact(stripe_len.max(1)).take(k).enumerate() {
        parity(&mut par, data)?;
        stripes.push(Stripe { index: i as u8, bytes: data.to_vec() });
    }
    if stripe_len == 0 {
        stripes = (0..k).map(|i| Stripe { index: i as u8, bytes: Vec::new() }).collect();
    }
    stripes.push(Stripe { index: k as u8, bytes: par });
    Ok(StripeSet { k, stripes })
}

/// Rebuilds a chunk from any `k` distinct stripes. Extra stripes are ignored
/// once all data stripes are present.
pub fn reconstruct(stripes: &[Stripe], k: usize) -> Result<Vec<u8>, ErasureError> {
    check_k(k)?;
    let mut slots: Vec<Option<&[u8]>> = vec![None; k + 1];
    for s in stripes {
        let idx = s.index as usize;
        if idx > k {
            return Err(ErasureError::BadIndex(s.index));
        }
        slots[idx].get_or_insert(&s.bytes);
    }
    let have = slots.iter().filter(|s| s.is_some()).count();
    if have < k {
        return Err(ErasureError::InsufficientStripes { needed: k, have });
    }
    let stripe_len = slots.iter().flatten().next().map_or(0, |s| s.len());
    if let Some(bad) = slots.iter().flatten().find(|s| s.len() != stripe_len) {
        return Err(ErasureError::LengthMismatch { target: stripe_len, source_len: bad.len() });
    }

    let mut out = Vec::with_capacity(stripe_len * k);
    match slots[..k].iter().position(Option::is_none) {
        None => {
            for s in slots[..k].iter().flatten() {
                out.extend_from_slice(s);
            }
        }
        Some(missing) => {
            let mut rebuilt = slots[k].unwrap().to_vec();
            for (i, s) in slots[..k].iter().enumerate() {
                if i != missing {
                    parity(&mut rebuilt, s.unwrap())?;
                }
            }
            for (i, s) in slots[..k].iter().enumerate() {
                if i == missing {
                    out.extend_from_slice(&rebuilt);
                } else {
                    out.extend_from_slice(s.unwrap());
                }
            }
        }
    }
    Ok(out)
}
