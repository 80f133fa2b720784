//! Access traces: one `R <offset> <length>` or `W <offset> <hexbytes>` per
//! line. Blank lines and `#` comments are skipped.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exit::Invalid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Op {
    Read { offset: u64, len: usize },
    Write { offset: u64, #[serde(skip)] data: Vec<u8> },
}

impl Op {
    pub fn offset(&self) -> u64 {
        match self {
            Op::Read { offset, .. } | Op::Write { offset, .. } => *offset,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Op::Read { len, .. } => *len,
            Op::Write { data, .. } => data.len(),
        }
    }
}

pub fn parse(text: &str) -> Result<Vec<Op>, Invalid> {
    let mut ops = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| Invalid(format!("trace line {}: {m}: `{line}`", i + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        let [op, off, arg] = f[..] else { return Err(err("expected three fields")) };
        let offset: u64 = off.parse().map_err(|_| err("bad offset"))?;
        ops.push(match op {
            "R" => Op::Read { offset, len: arg.parse().map_err(|_| err("bad length"))? },
            "W" => Op::Write { offset, data: hex::decode(arg).map_err(|_| err("bad hex"))? },
            _ => return Err(err("op must be R or W")),
        });
    }
    Ok(ops)
}

/// Page-sized reads of `ceil(fraction * pages)` distinct random pages, in
/// offset order.
pub fn random_pages(image_len: u64, page: usize, fraction: f64, seed: u64) -> Vec<Op> {
    let pages = image_len.div_ceil(page as u64) as usize;
    let want = ((fraction * pages as f64).ceil() as usize).min(pages);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: BTreeSet<usize> = sample(&mut rng, pages, want).into_iter().collect();
    chosen
        .into_iter()
        .map(|p| {
            let offset = (p * page) as u64;
            Op::Read { offset, len: (image_len - offset).min(page as u64) as usize }
        })
        .collect()
}

/// Chunks any op of the trace overlaps.
pub fn chunks_touched(ops: &[Op], chunk_size: usize) -> BTreeSet<u64> {
    let cs = chunk_size as u64;
    ops.iter()
        .filter(|o| o.len() > 0)
        .flat_map(|o| o.offset() / cs..=(o.offset() + o.len() as u64 - 1) / cs)
        .collect()
}
