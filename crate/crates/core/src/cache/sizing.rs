//! Cache sizing calculator.
//!
//! Two sizes are derived from an access trace and the larger is recommended:
//! the break-even size keeps every item whose reuse interval is shorter than
//! the interval at which retaining it costs as much as refetching it, and the
//! goal size is the smallest LRU cache meeting a hit-rate target. Both use
//! LRU stack distances computed in one pass.

use std::collections::HashMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingInput {
    pub item_size: u64,
    /// Cost of keeping one byte cached for one second.
    pub cost_per_byte_second: f64,
    /// Cost of one miss served from origin.
    pub cost_per_fetch: f64,
    pub hit_rate_goal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingReport {
    /// Seconds; reuse intervals at or below this are worth caching.
    pub break_even_interval: f64,
    pub break_even_bytes: u64,
    /// `None` when the goal exceeds the trace's maximum achievable hit rate.
    pub goal_bytes: Option<u64>,
    pub recommended_bytes: u64,
    pub max_hit_rate: f64,
}

struct Fenwick(Vec<i64>);

impl Fenwick {
    fn add(&mut self, mut i: usize, v: i64) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    fn prefix(&self, mut i: usize) -> i64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// LRU stack distance of each access (distinct items touched since the
/// previous access to the same key) with its reuse interval; `None` for
/// first accesses.
pub fn stack_distances(trace: &[(f64, u64)]) -> Vec<Option<(usize, f64)>> {
    let mut bit = Fenwick(vec![0; trace.len() + 1]);
    let mut last: HashMap<u64, usize> = HashMap::new();
    let mut out = Vec::with_capacity(trace.len());
    for (i, &(t, key)) in trace.iter().enumerate() {
        match last.insert(key, i) {
            Some(j) => {
                let d = bit.prefix(i) - bit.prefix(j + 1);
                out.push(Some((d as usize, t - trace[j].0)));
                bit.add(j, -1);
            }
            None => out.push(None),
        }
        bit.add(i, 1);
    }
    out
}

/// Hit rate of an LRU cache holding `items` entries.
pub fn lru_hit_rate(distances: &[Option<(usize, f64)>], items: usize) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let hits = distances.iter().filter(|d| matches!(d, Some((dist, _)) if *dist < items)).count();
    hits as f64 / distances.len() as f64
}

pub fn size_cache(trace: &[(f64, u64)], input: SizingInput) -> SizingReport {
    let break_even_interval = input.cost_per_fetch / (input.cost_per_byte_second * input.item_size as f64);
    let d = stack_distances(trace);
    let reuses: Vec<(usize, f64)> = d.iter().flatten().copied().collect();
    let break_even_items = reuses
        .iter()
        .filter(|(_, gap)| *gap <= break_even_interval)
        .map(|(dist, _)| dist + 1)
        .max()
        .unwrap_or(0);

    let total = trace.len();
    let max_hit_rate = if total == 0 { 0.0 } else { reuses.len() as f64 / total as f64 };
    let goal_items = if input.hit_rate_goal > max_hit_rate + 1e-12 {
        None
    } else if input.hit_rate_goal <= 0.0 {
        Some(0)
    } else {
        let mut by_dist: Vec<usize> = reuses.iter().map(|(dist, _)| *dist).collect();
        by_dist.sort_unstable();
        let needed = (input.hit_rate_goal * total as f64 - 1e-9).ceil().max(1.0) as usize;
        // Capacity c hits every reuse with distance < c.
        by_dist.get(needed - 1).map(|&dist| dist + 1)
    };

    let break_even_bytes = break_even_items as u64 * input.item_size;
    let goal_bytes = goal_items.map(|n| n as u64 * input.item_size);
    SizingReport {
        break_even_interval,
        break_even_bytes,
        goal_bytes,
        recommended_bytes: break_even_bytes.max(goal_bytes.unwrap_or(0)),
        max_hit_rate,
    }
}
