//! Consistent hash ring with virtual nodes and per-chunk stripe spreading.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::ChunkHash;

pub type NodeId = u32;

pub const DEFAULT_VNODES: usize = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RingError {
    #[error("no cache node is up")]
    Unavailable,
}

fn pos(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Names are already SHA-256 digests; only the stripe index needs mixing in
/// (splitmix64 finalizer).
fn key_pos(name: &ChunkHash, stripe: u8) -> u64 {
    let mut x = u64::from_le_bytes(name.0[..8].try_into().unwrap()) ^ (stripe as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone)]
pub struct HashRing {
    vnodes: usize,
    members: BTreeSet<NodeId>,
    points: Vec<(u64, NodeId)>,
}

impl HashRing {
    pub fn new(vnodes: usize) -> Self {
        assert!(vnodes > 0);
        HashRing { vnodes, members: BTreeSet::new(), points: Vec::new() }
    }

    pub fn with_nodes(vnodes: usize, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let mut ring = Self::new(vnodes);
        for n in nodes {
            ring.add(n);
        }
        ring
    }

    pub fn add(&mut self, node: NodeId) {
        if !self.members.insert(node) {
            return;
        }
        for v in 0..self.vnodes as u32 {
            self.points.push((pos(&[b"node", &node.to_le_bytes(), &v.to_le_bytes()]), node));
        }
        self.points.sort_unstable();
    }

    pub fn remove(&mut self, node: NodeId) {
        if self.members.remove(&node) {
            self.points.retain(|&(_, n)| n != node);
        }
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Ring members clockwise from `at`, each vnode in turn (with repeats).
    fn walk(&self, at: u64) -> impl Iterator<Item = NodeId> + '_ {
        let start = self.points.partition_point(|&(p, _)| p < at);
        self.points[start..].iter().chain(&self.points[..start]).map(|&(_, n)| n)
    }

    /// Owner of a single key, ignoring health and sibling stripes.
    pub fn locate(&self, name: &ChunkHash, stripe: u8) -> Option<NodeId> {
        self.walk(key_pos(name, stripe)).next()
    }

    /// Places `count` stripes of one chunk. Each stripe takes the first ring
    /// successor not already holding a sibling, computed over the full
    /// membership so healthy placements do not move when a node goes down.
    /// Stripes whose owner is down are then moved to the next up node not
    /// already used by the chunk.
    pub fn place_stripes(&self, name: &ChunkHash, count: usize, is_up: impl Fn(NodeId) -> bool) -> Result<Vec<NodeId>, RingError> {
        if !self.members.iter().any(|&n| is_up(n)) {
            return Err(RingError::Unavailable);
        }
        let mut placed: Vec<NodeId> = Vec::with_capacity(count);
        for s in 0..count {
            let at = key_pos(name, s as u8);
            let node = self
                .walk(at)
                .find(|n| !placed.contains(n))
                .or_else(|| self.walk(at).next())
                .expect("ring non-empty");
            placed.push(node);
        }
        for s in 0..count {
            if is_up(placed[s]) {
                continue;
            }
            let at = key_pos(name, s as u8);
            placed[s] = self
                .walk(at)
                .find(|&n| is_up(n) && !placed.contains(&n))
                .or_else(|| self.walk(at).find(|&n| is_up(n)))
                .expect("an up node exists");
        }
        Ok(placed)
    }
}
