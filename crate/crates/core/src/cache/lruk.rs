//! Byte-bounded LRU-k.
//!
//! Each entry keeps its last `k` access times. The eviction victim is the
//! entry whose k-th most recent access is oldest; entries seen fewer than
//! `k` times count as infinitely old and among themselves fall back to plain
//! LRU on their latest access. Insertion counts as an access.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::hash::Hash;

/// Every access takes a fresh clock tick, so ranks of resident entries are
/// unique and can key the eviction order directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Rank {
    /// 0 = fewer than k accesses, 1 = full history.
    class: u8,
    time: u64,
}

#[derive(Debug)]
struct Entry<V> {
    value: V,
    size: u64,
    history: VecDeque<u64>,
    rank: Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Oversized {
    pub size: u64,
    pub capacity: u64,
}

#[derive(Debug)]
pub struct LruK<K, V> {
    k: usize,
    capacity: u64,
    used: u64,
    clock: u64,
    entries: HashMap<K, Entry<V>>,
    order: BTreeMap<Rank, K>,
}

impl<K: Clone + Eq + Hash + Ord, V> LruK<K, V> {
    pub fn new(k: usize, capacity: u64) -> Self {
        assert!(k >= 1, "LRU-k needs k >= 1");
        LruK { k, capacity, used: 0, clock: 0, entries: HashMap::new(), order: BTreeMap::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.entries.contains_key(key)
    }

    /// Number of recorded accesses (at most `k`).
    pub fn history_len(&self, key: &K) -> Option<usize> {
        self.entries.get(key).map(|e| e.history.len())
    }

    fn rank_of(k: usize, history: &VecDeque<u64>) -> Rank {
        if history.len() < k {
            Rank { class: 0, time: *history.back().expect("history never empty") }
        } else {
            Rank { class: 1, time: history[0] }
        }
    }

    fn touch(k: usize, now: u64, order: &mut BTreeMap<Rank, K>, e: &mut Entry<V>) {
        let key = order.remove(&e.rank).expect("resident entry is ranked");
        if e.history.len() == k {
            e.history.pop_front();
        }
        e.history.push_back(now);
        e.rank = Self::rank_of(k, &e.history);
        let clash = order.insert(e.rank, key);
        debug_assert!(clash.is_none());
    }

    /// Looks up and records an access.
    pub fn get(&mut self, key: &K) -> Option<&V> {
        let e = self.entries.get_mut(key)?;
        self.clock += 1;
        Self::touch(self.k, self.clock, &mut self.order, e);
        Some(&e.value)
    }

    /// Looks up without recording an access.
    pub fn peek(&self, key: &K) -> Option<&V> {
        self.entries.get(key).map(|e| &e.value)
    }

    pub fn peek_mut(&mut self, key: &K) -> Option<&mut V> {
        self.entries.get_mut(key).map(|e| &mut e.value)
    }

    /// The entry that would be evicted next.
    pub fn victim(&self) -> Option<&K> {
        self.order.values().next()
    }

    /// Inserts (or replaces) an entry, evicting as needed. Returns the
    /// evicted entries in eviction order.
    pub fn insert(&mut self, key: K, value: V, size: u64) -> Result<Vec<(K, V)>, Oversized> {
        if size > self.capacity {
            return Err(Oversized { size, capacity: self.capacity });
        }
        if let Some(e) = self.entries.get_mut(&key) {
            self.used = self.used - e.size + size;
            e.value = value;
            e.size = size;
            self.clock += 1;
            Self::touch(self.k, self.clock, &mut self.order, e);
        } else {
            self.clock += 1;
            let mut history = VecDeque::with_capacity(self.k);
            history.push_back(self.clock);
            let rank = Self::rank_of(self.k, &history);
            self.order.insert(rank, key.clone());
            self.entries.insert(key.clone(), Entry { value, size, history, rank });
            self.used += size;
        }
        let mut evicted = Vec::new();
        while self.used > self.capacity {
            let victim = self
                .order
                .values()
                .find(|k| **k != key)
                .cloned()
                .expect("something other than the new entry is resident");
            let v = self.remove(&victim).expect("victim resident");
            evicted.push((victim, v));
        }
        Ok(evicted)
    }

    pub fn remove(&mut self, key: &K) -> Option<V> {
        let e = self.entries.remove(key)?;
        self.order.remove(&e.rank);
        self.used -= e.size;
        Some(e.value)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.order.clear();
        self.used = 0;
    }

    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.entries.keys()
    }
}
