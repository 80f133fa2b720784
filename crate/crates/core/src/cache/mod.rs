//! Tiered chunk cache: per-worker L1 (plaintext), distributed L2 (erasure
//! coded stripes of ciphertext), origin as L3.

mod fetch;
mod lruk;
mod node;
mod ring;
pub mod sizing;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

pub use fetch::{FetchConfig, FetchError, FetchResult, FetchTiming, Redundancy, Tier, TieredCache};
pub use lruk::{LruK, Oversized};
pub use node::{CacheNode, L2Request, L2Response, NodeStats};
pub use ring::{HashRing, NodeId, RingError, DEFAULT_VNODES};

use crate::crypto::ChunkHash;
use crate::origin::{ObjectKind, OriginError, OriginStore, RootId};

/// Access to the L2 tier: stripe placement plus request delivery.
pub trait L2Client: Send + Sync {
    fn place(&self, name: &ChunkHash, count: usize) -> Result<Vec<NodeId>, RingError>;
    fn send(&self, node: NodeId, req: &L2Request) -> L2Response;
}

/// Per-request latency in seconds. The default is free.
pub trait LatencySource {
    fn l2(&mut self, _node: NodeId) -> f64 {
        0.0
    }
    fn origin(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroLatency;

impl LatencySource for ZeroLatency {}

/// Where full chunk ciphertexts come from on an L2 miss.
pub trait OriginSource: Send + Sync {
    fn fetch_ciphertext(&self, name: &ChunkHash) -> Result<Arc<[u8]>, OriginError>;
}

/// Reads chunks from one root of an origin store.
pub struct StoreOrigin {
    pub store: Arc<OriginStore>,
    pub root: RootId,
}

impl OriginSource for StoreOrigin {
    fn fetch_ciphertext(&self, name: &ChunkHash) -> Result<Arc<[u8]>, OriginError> {
        self.store.get(self.root, ObjectKind::Chunk, name)
    }
}

/// Worker-local plaintext cache; safe to share between threads.
pub struct L1Cache {
    inner: Mutex<LruK<ChunkHash, Arc<[u8]>>>,
}

impl L1Cache {
    pub fn new(capacity: u64, k: usize) -> Self {
        L1Cache { inner: Mutex::new(LruK::new(k, capacity)) }
    }

    pub fn get(&self, name: &ChunkHash) -> Option<Arc<[u8]>> {
        self.inner.lock().get(name).cloned()
    }

    /// Inserts unless already present, returning the resident value. Oversized
    /// items are not cached and come back unchanged.
    pub fn put(&self, name: ChunkHash, bytes: Arc<[u8]>) -> Arc<[u8]> {
        let mut inner = self.inner.lock();
        if let Some(existing) = inner.get(&name) {
            return existing.clone();
        }
        let size = bytes.len() as u64;
        let _ = inner.insert(name, bytes.clone(), size);
        bytes
    }

    pub fn contains(&self, name: &ChunkHash) -> bool {
        self.inner.lock().contains(name)
    }

    pub fn capacity(&self) -> u64 {
        self.inner.lock().capacity()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.inner.lock().clear();
    }
}

/// In-process L2: a ring plus the nodes it points at.
pub struct L2Cluster {
    ring: RwLock<HashRing>,
    nodes: RwLock<BTreeMap<NodeId, Arc<Mutex<CacheNode>>>>,
    node_capacity: u64,
    k_history: usize,
}

impl L2Cluster {
    pub fn new(nodes: u32, node_capacity: u64, lru_k: usize, vnodes: usize) -> Self {
        let ring = HashRing::with_nodes(vnodes, 0..nodes);
        let map = (0..nodes).map(|id| (id, Arc::new(Mutex::new(CacheNode::new(id, node_capacity, lru_k))))).collect();
        L2Cluster { ring: RwLock::new(ring), nodes: RwLock::new(map), node_capacity, k_history: lru_k }
    }

    pub fn node(&self, id: NodeId) -> Option<Arc<Mutex<CacheNode>>> {
        self.nodes.read().get(&id).cloned()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.read().keys().copied().collect()
    }

    pub fn add_node(&self, id: NodeId) {
        self.nodes
            .write()
            .entry(id)
            .or_insert_with(|| Arc::new(Mutex::new(CacheNode::new(id, self.node_capacity, self.k_history))));
        self.ring.write().add(id);
    }

    pub fn remove_node(&self, id: NodeId) {
        self.ring.write().remove(id);
        self.nodes.write().remove(&id);
    }

    pub fn set_up(&self, id: NodeId, up: bool) {
        if let Some(n) = self.node(id) {
            n.lock().set_up(up);
        }
    }

    pub fn flush(&self) {
        for n in self.nodes.read().values() {
            n.lock().flush();
        }
    }

    pub fn is_up(&self, node: NodeId) -> bool {
        self.node(node).is_some_and(|n| n.lock().is_up())
    }

    pub fn stats(&self) -> BTreeMap<NodeId, NodeStats> {
        self.nodes.read().iter().map(|(id, n)| (*id, n.lock().stats())).collect()
    }

    /// Total stripes held across nodes.
    pub fn stripe_count(&self) -> usize {
        self.nodes.read().values().map(|n| n.lock().len()).sum()
    }
}

impl L2Client for L2Cluster {
    fn place(&self, name: &ChunkHash, count: usize) -> Result<Vec<NodeId>, RingError> {
        self.ring.read().place_stripes(name, count, |n| self.is_up(n))
    }

    fn send(&self, node: NodeId, req: &L2Request) -> L2Response {
        match self.node(node) {
            Some(n) => n.lock().handle(req),
            None => L2Response::Unavailable,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_put_keeps_first_value() {
        let l1 = L1Cache::new(100, 2);
        let name = ChunkHash::of(b"a");
        let first = l1.put(name, Arc::from(&b"one"[..]));
        let second = l1.put(name, Arc::from(&b"two"[..]));
        assert_eq!(first, second);
        assert_eq!(l1.get(&name).as_deref(), Some(&b"one"[..]));
        // Oversized items are passed through, not cached.
        let big = ChunkHash::of(b"big");
        l1.put(big, Arc::from(vec![0u8; 200]));
        assert!(!l1.contains(&big));
    }

    #[test]
    fn l1_is_shareable_across_threads() {
        let l1 = Arc::new(L1Cache::new(1 << 20, 2));
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let l1 = l1.clone();
                std::thread::spawn(move || {
                    for i in 0..200u32 {
                        let name = ChunkHash::of(&(i % 50).to_le_bytes());
                        let v = l1.put(name, Arc::from(&(i % 50).to_le_bytes()[..]));
                        assert_eq!(&v[..], &(i % 50).to_le_bytes());
                        let _ = t;
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(l1.len(), 50);
    }

    #[test]
    fn cluster_membership_and_health() {
        let c = L2Cluster::new(6, 1 << 20, 2, 50);
        let name = ChunkHash::of(b"c");
        let p = c.place(&name, 5).unwrap();
        c.set_up(p[0], false);
        assert!(!c.is_up(p[0]));
        assert!(!c.place(&name, 5).unwrap().contains(&p[0]));
        c.remove_node(p[1]);
        assert!(c.node(p[1]).is_none());
        assert_eq!(c.send(p[1], &L2Request::Get { name, stripe: 0 }), L2Response::Unavailable);
        c.add_node(99);
        assert!(c.node_ids().contains(&99));
    }
}
