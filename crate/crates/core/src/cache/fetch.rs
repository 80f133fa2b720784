use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::node::{L2Request, L2Response};
use super::ring::NodeId;
use super::{L1Cache, L2Client, LatencySource, OriginSource};
use crate::crypto::{decrypt_chunk, ChunkHash, CryptoError, ManifestEntry};
use crate::erasure::{self, Stripe, DEFAULT_DATA_STRIPES};
use crate::origin::OriginError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Tier {
    L1,
    L2,
    L3,
}

/// How many stripe requests an L2 fetch issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Redundancy {
    /// Request only the `k` data stripes; any miss falls back to origin.
    Exact,
    /// Request all `k + 1` stripes and use the first `k` to arrive.
    OneExtra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchConfig {
    pub k: usize,
    pub redundancy: Redundancy,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig { k: DEFAULT_DATA_STRIPES, redundancy: Redundancy::OneExtra }
    }
}

/// Seconds spent waiting on each tier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FetchTiming {
    pub l2: f64,
    pub origin: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FetchResult {
    pub plaintext: Arc<[u8]>,
    pub source: Tier,
    /// Stripe GETs issued; constant for every fetch that reaches L2.
    pub l2_requests: usize,
    pub l2_stripe_hits: usize,
    pub timing: FetchTiming,
    /// Stripes whose bytes failed verification, as `(node, stripe)`.
    pub corrupt_stripes: Vec<(NodeId, u8)>,
    /// A reconstruction failed verification and no other subset was usable.
    pub l2_corruption: bool,
    pub write_backs: usize,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("chunk {chunk_index}: zero chunks are never fetched")]
    ZeroChunk { chunk_index: u64 },
    #[error("chunk {chunk_index} ({name}) not found at origin")]
    NotFound { chunk_index: u64, name: ChunkHash },
    #[error("chunk {chunk_index}: origin bytes failed verification")]
    Integrity { chunk_index: u64, source: CryptoError },
    #[error(transparent)]
    Origin(OriginError),
}

pub struct TieredCache {
    l1: L1Cache,
    l2: Arc<dyn L2Client>,
    origin: Arc<dyn OriginSource>,
    cfg: FetchConfig,
}

impl TieredCache {
    pub fn new(l1: L1Cache, l2: Arc<dyn L2Client>, origin: Arc<dyn OriginSource>, cfg: FetchConfig) -> Self {
        TieredCache { l1, l2, origin, cfg }
    }

    pub fn l1(&self) -> &L1Cache {
        &self.l1
    }

    pub fn config(&self) -> FetchConfig {
        self.cfg
    }

    pub fn set_origin(&mut self, origin: Arc<dyn OriginSource>) {
        self.origin = origin;
    }

    /// Fetches and decrypts one chunk, verifying it against `entry`.
    pub fn fetch_chunk(
        &self,
        chunk_index: u64,
        entry: &ManifestEntry,
        lat: &mut dyn LatencySource,
    ) -> Result<FetchResult, FetchError> {
        let (false, Some(key)) = (entry.is_zero, entry.key) else {
            return Err(FetchError::ZeroChunk { chunk_index });
        };
        let name = entry.hash;
        if let Some(plaintext) = self.l1.get(&name) {
            return Ok(FetchResult {
                plaintext,
                source: Tier::L1,
                l2_requests: 0,
                l2_stripe_hits: 0,
                timing: FetchTiming::default(),
                corrupt_stripes: Vec::new(),
                l2_corruption: false,
                write_backs: 0,
            });
        }

        let k = self.cfg.k;
        let total = k + 1;
        let wanted = match self.cfg.redundancy {
            Redundancy::Exact => k,
            Redundancy::OneExtra => total,
        };
        let placement = self.l2.place(&name, total).ok();

        let mut l2_wait = 0.0;
        let mut l2_requests = 0;
        let mut arrivals: Vec<(f64, NodeId, Stripe)> = Vec::new();
        if let Some(nodes) = &placement {
            for s in 0..wanted {
                let t = lat.l2(nodes[s]);
                l2_wait = f64::max(l2_wait, t);
                l2_requests += 1;
                if let L2Response::Hit(b) = self.l2.send(nodes[s], &L2Request::Get { name, stripe: s as u8 }) {
                    arrivals.push((t, nodes[s], Stripe { index: s as u8, bytes: b.to_vec() }));
                }
            }
        }
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let l2_stripe_hits = arrivals.len();

        let mut corrupt_stripes = Vec::new();
        let mut l2_corruption = false;
        if arrivals.len() >= k {
            // First the k earliest arrivals, then every other k-subset.
            let m = arrivals.len();
            let excludes: Vec<Option<usize>> = if m == k { vec![None] } else { (0..m).rev().map(Some).collect() };
            for (attempt, skip) in excludes.iter().enumerate() {
                let subset: Vec<Stripe> = arrivals
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| Some(*i) != *skip)
                    .map(|(_, a)| a.2.clone())
                    .collect();
                let Ok(ct) = erasure::reconstruct(&subset, k) else { continue };
                match decrypt_chunk(&ct, &key, &name, chunk_index) {
                    Ok(p) => {
                        let wait = if attempt == 0 { arrivals[k - 1].0 } else { l2_wait };
                        if attempt > 0 {
                            if let Some(i) = skip {
                                corrupt_stripes.push((arrivals[*i].1, arrivals[*i].2.index));
                            }
                        }
                        let plaintext = self.l1.put(name, Arc::from(p));
                        return Ok(FetchResult {
                            plaintext,
                            source: Tier::L2,
                            l2_requests,
                            l2_stripe_hits,
                            timing: FetchTiming { l2: wait, origin: 0.0, total: wait },
                            corrupt_stripes,
                            l2_corruption: false,
                            write_backs: 0,
                        });
                    }
                    Err(_) => l2_corruption = true,
                }
            }
        }

        let origin_t = lat.origin();
        let ct = match self.origin.fetch_ciphertext(&name) {
            Ok(ct) => ct,
            Err(OriginError::NotFound { .. }) => return Err(FetchError::NotFound { chunk_index, name }),
            Err(e) => return Err(FetchError::Origin(e)),
        };
        let p = decrypt_chunk(&ct, &key, &name, chunk_index).map_err(|source| FetchError::Integrity { chunk_index, source })?;
        let mut write_backs = 0;
        if let (Some(nodes), Ok(set)) = (&placement, erasure::encode(&ct, k)) {
            for s in set.stripes {
                let node = nodes[s.index as usize];
                let req = L2Request::Put { name, stripe: s.index, bytes: Arc::from(s.bytes) };
                if self.l2.send(node, &req) == L2Response::Stored {
                    write_backs += 1;
                }
            }
        }
        let plaintext = self.l1.put(name, Arc::from(p));
        Ok(FetchResult {
            plaintext,
            source: Tier::L3,
            l2_requests,
            l2_stripe_hits,
            timing: FetchTiming { l2: l2_wait, origin: origin_t, total: l2_wait + origin_t },
            corrupt_stripes,
            l2_corruption,
            write_backs,
        })
    }
}
