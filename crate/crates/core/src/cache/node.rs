//! A single L2 cache node: LRU-k over `(chunk, stripe)` keys.

use std::sync::Arc;

use super::lruk::LruK;
use super::ring::NodeId;
use crate::crypto::ChunkHash;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum L2Request {
    Get { name: ChunkHash, stripe: u8 },
    Put { name: ChunkHash, stripe: u8, bytes: Arc<[u8]> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum L2Response {
    Hit(Arc<[u8]>),
    Miss,
    Stored,
    /// Node is down or unreachable.
    Unavailable,
    /// Request rejected (for example, a stripe larger than the node).
    Rejected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub gets: u64,
    pub hits: u64,
    pub puts: u64,
    pub evictions: u64,
}

#[derive(Debug)]
pub struct CacheNode {
    id: NodeId,
    store: LruK<(ChunkHash, u8), Arc<[u8]>>,
    up: bool,
    stats: NodeStats,
    evicted: Option<Vec<(ChunkHash, u8)>>,
}

impl CacheNode {
    pub fn new(id: NodeId, capacity: u64, k: usize) -> Self {
        CacheNode { id, store: LruK::new(k, capacity), up: true, stats: NodeStats::default(), evicted: None }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn is_up(&self) -> bool {
        self.up
    }

    pub fn set_up(&mut self, up: bool) {
        self.up = up;
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn used_bytes(&self) -> u64 {
        self.store.used()
    }

    /// Starts (or stops) recording evicted keys for `take_evictions`.
    pub fn record_evictions(&mut self, on: bool) {
        self.evicted = on.then(Vec::new);
    }

    pub fn take_evictions(&mut self) -> Vec<(ChunkHash, u8)> {
        self.evicted.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn contains(&self, name: &ChunkHash, stripe: u8) -> bool {
        self.store.contains(&(*name, stripe))
    }

    pub fn handle(&mut self, req: &L2Request) -> L2Response {
        if !self.up {
            return L2Response::Unavailable;
        }
        match req {
            L2Request::Get { name, stripe } => {
                self.stats.gets += 1;
                match self.store.get(&(*name, *stripe)) {
                    Some(b) => {
                        self.stats.hits += 1;
                        L2Response::Hit(b.clone())
                    }
                    None => L2Response::Miss,
                }
            }
            L2Request::Put { name, stripe, bytes } => {
                self.stats.puts += 1;
                match self.store.insert((*name, *stripe), bytes.clone(), bytes.len() as u64) {
                    Ok(ev) => {
                        self.stats.evictions += ev.len() as u64;
                        if let Some(log) = &mut self.evicted {
                            log.extend(ev.into_iter().map(|(key, _)| key));
                        }
                        L2Response::Stored
                    }
                    Err(_) => L2Response::Rejected,
                }
            }
        }
    }

    /// Drops all cached stripes.
    pub fn flush(&mut self) {
        self.store.clear();
    }

    /// Test hook: flips one bit of a cached stripe in place.
    pub fn corrupt(&mut self, name: &ChunkHash, stripe: u8, bit: usize) -> bool {
        let Some(b) = self.store.peek_mut(&(*name, stripe)) else {
            return false;
        };
        if b.is_empty() {
            return false;
        }
        let mut v = b.to_vec();
        let bit = bit % (v.len() * 8);
        v[bit / 8] ^= 1 << (bit % 8);
        *b = Arc::from(v);
        true
    }
}
