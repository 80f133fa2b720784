use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::sync::Arc;

use lazyblock_core::cache::{
    FetchConfig, FetchError, L1Cache, L2Client, L2Cluster, L2Request, LatencySource, NodeId, StoreOrigin, Tier as CacheTier,
    TieredCache,
};
use lazyblock_core::crypto::{
    convergent_encrypt, open_manifest, seal_manifest, ChunkHash, CryptoError, CustomerKey, ManifestEntry, Salt, SealedManifest,
};
use lazyblock_core::erasure;
use lazyblock_core::origin::{ObjectKind, OriginError, OriginStore, PutOutcome, RootId};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Zipf};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, LatencyModel, SimConfig};
use crate::latency::{Sampler, Tier};
use crate::report::{quantile_points, ecdf_points, Bucket, LatencyStats, LittleCheck, MetricsReport, Summary};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fetch failed: {0}")]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Origin(#[from] OriginError),
    #[error("cache never reached steady state before the flush (baseline hit rates spread {spread:.3})")]
    NotSteady { spread: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Arrival,
    Cron(u64),
    Complete,
    Node(NodeId, bool),
    Flush,
}

struct Scheduled {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Latency source handed to the cache for one start. Each start draws from
/// its own stream.
struct StartClock<'a> {
    rng: ChaCha8Rng,
    model: &'a LatencyModel,
    l2: Tier,
    origin: Tier,
    origin_factor: f64,
    l2_requests: usize,
    slow_touched: bool,
}

impl LatencySource for StartClock<'_> {
    fn l2(&mut self, node: NodeId) -> f64 {
        self.l2_requests += 1;
        let f = self.model.slow_factor(node);
        if f != 1.0 {
            self.slow_touched = true;
        }
        self.l2.draw(&mut self.rng) * f
    }

    fn origin(&mut self) -> f64 {
        self.origin.draw(&mut self.rng) * self.origin_factor
    }
}

fn chunk_plaintext(tag: &[u8], owner: u64, index: u64, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 32);
    let mut ctr = 0u32;
    while out.len() < len {
        let mut h = Sha256::new();
        h.update(tag);
        h.update(owner.to_le_bytes());
        h.update(index.to_le_bytes());
        h.update(ctr.to_le_bytes());
        out.extend_from_slice(&h.finalize());
        ctr += 1;
    }
    out.truncate(len);
    out
}

const LATENCY_STREAMS: u64 = 1 << 62;
const SEAL_STREAMS: u64 = 2 << 62;

pub(crate) struct Simulation {
    cfg: SimConfig,
    /// Arrival times and function choice.
    sampler: Sampler,
    latencies: Sampler,
    seals: Sampler,
    clock: f64,
    queue: BinaryHeap<Scheduled>,
    next_seq: u64,
    cluster: Arc<L2Cluster>,
    workers: Vec<TieredCache>,
    next_worker: usize,
    store: Arc<OriginStore>,
    root: RootId,
    customer: CustomerKey,
    manifests: BTreeMap<u64, ChunkHash>,
    touched: Vec<usize>,
    hot_names: HashSet<ChunkHash>,
    l2: Tier,
    origin: Tier,
    manifest: Tier,
    zipf: Zipf<f64>,
    max_rate: f64,
    in_flight: u32,
    buckets: Vec<Bucket>,
    start_latencies: Vec<f64>,
    chunk_latencies: Vec<f64>,
    start_max_chunk: Vec<f64>,
    slow_touches: u64,
    slow_analytic_sum: f64,
    l2_request_total: u64,
    chunk_refs: u64,
    unique_chunks: u64,
}

impl Simulation {
    pub(crate) fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let t = &cfg.topology;
        let w = &cfg.workload;
        let cluster = Arc::new(L2Cluster::new(t.l2_nodes, t.l2_node_bytes, t.lru_k, t.vnodes));
        for id in cluster.node_ids() {
            cluster.node(id).unwrap().lock().record_evictions(true);
        }
        let store = Arc::new(OriginStore::in_memory());
        let root = store.create_root();
        let origin = Arc::new(StoreOrigin { store: store.clone(), root });
        let fetch = FetchConfig { k: t.erasure_k, redundancy: t.redundancy };
        let workers = (0..t.workers)
            .map(|_| TieredCache::new(L1Cache::new(t.l1_bytes, t.lru_k), cluster.clone(), origin.clone(), fetch))
            .collect();
        let n = w.chunks_per_image() as usize;
        let m = w.touched_chunks as usize;
        let max_mult = w.spikes.iter().map(|s| s.multiplier).fold(1.0, f64::max);
        let mut sim = Simulation {
            sampler: Sampler::new(cfg.seed),
            latencies: Sampler::at_offset(cfg.seed, LATENCY_STREAMS),
            seals: Sampler::at_offset(cfg.seed, SEAL_STREAMS),
            clock: 0.0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            cluster,
            workers,
            next_worker: 0,
            store,
            root,
            customer: CustomerKey { key_id: "sim".into(), key: [7; 32] },
            manifests: BTreeMap::new(),
            touched: (0..m).map(|i| i * n / m).collect(),
            hot_names: HashSet::new(),
            l2: Tier::new(cfg.latency.l2),
            origin: Tier::new(cfg.latency.origin),
            manifest: Tier::new(cfg.latency.manifest.unwrap_or(cfg.latency.l2)),
            zipf: Zipf::new(w.functions as f64, w.zipf_s).expect("validated zipf"),
            max_rate: w.arrival_rate * max_mult,
            in_flight: 0,
            buckets: Vec::new(),
            start_latencies: Vec::new(),
            chunk_latencies: Vec::new(),
            start_max_chunk: Vec::new(),
            slow_touches: 0,
            slow_analytic_sum: 0.0,
            l2_request_total: 0,
            chunk_refs: 0,
            unique_chunks: 0,
            cfg: cfg.clone(),
        };
        if t.prewarm_l2 {
            sim.prewarm()?;
        }
        sim.schedule_initial();
        Ok(sim)
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.queue.push(Scheduled { time, seq: self.next_seq, kind });
        self.next_seq += 1;
    }

    fn schedule_initial(&mut self) {
        let cfg = self.cfg.clone();
        if self.max_rate > 0.0 {
            let first = self.sampler.sample(&Exp::new(self.max_rate).unwrap());
            self.push(first, Kind::Arrival);
        }
        if let Some(c) = &cfg.workload.cron {
            let mut burst = 0u64;
            while c.first + burst as f64 * c.period < cfg.duration {
                let at = c.first + burst as f64 * c.period;
                for j in 0..c.functions as u64 {
                    let t = at + c.spread * j as f64 / c.functions as f64;
                    if t < cfg.duration {
                        let id = cfg.workload.functions as u64 + burst * c.functions as u64 + j;
                        self.push(t, Kind::Cron(id));
                    }
                }
                burst += 1;
            }
        }
        for o in &cfg.latency.outages {
            self.push(o.from, Kind::Node(o.node, false));
            self.push(o.until, Kind::Node(o.node, true));
        }
        if let Some(d) = &cfg.drill {
            if cfg.mode == crate::config::Mode::ColdStart {
                self.push(d.flush_at, Kind::Flush);
            }
        }
    }

    fn is_cron(&self, function: u64) -> bool {
        function >= self.cfg.workload.functions as u64
    }

    /// Builds and uploads a function's image on first use. Returns the new
    /// chunks as `(name, ciphertext)`.
    fn ensure_image(&mut self, function: u64) -> Result<Vec<(ChunkHash, Vec<u8>)>, SimError> {
        if self.manifests.contains_key(&function) {
            return Ok(Vec::new());
        }
        let w = &self.cfg.workload;
        let cron = self.is_cron(function);
        let salt = Salt::empty();
        let mut entries = Vec::new();
        let mut fresh = Vec::new();
        for j in 0..w.chunks_per_image() as u64 {
            let p = if cron {
                chunk_plaintext(b"cron", function, j, w.chunk_bytes)
            } else if j < w.base_chunks as u64 {
                chunk_plaintext(b"base", function % w.bases as u64, j, w.chunk_bytes)
            } else {
                chunk_plaintext(b"func", function, j, w.chunk_bytes)
            };
            let (key, ct, name) = convergent_encrypt(&p, &salt);
            entries.push(ManifestEntry::data(name, key));
            if self.store.put_if_absent(self.root, ObjectKind::Chunk, &name, &ct)? == PutOutcome::Stored {
                fresh.push((name, ct));
            }
            if !cron {
                self.hot_names.insert(name);
            }
        }
        self.chunk_refs += entries.len() as u64;
        self.unique_chunks += fresh.len() as u64;
        let image_length = entries.len() as u64 * w.chunk_bytes as u64;
        let sealed = seal_manifest(&entries, image_length, w.chunk_bytes as u32, salt, &self.customer, &mut self.seals.next_rng())?;
        let id = sealed.id();
        self.store.put_if_absent(self.root, ObjectKind::Manifest, &id, &sealed.to_bytes())?;
        self.manifests.insert(function, id);
        Ok(fresh)
    }

    fn prewarm(&mut self) -> Result<(), SimError> {
        let k = self.cfg.topology.erasure_k;
        for f in 0..self.cfg.workload.functions as u64 {
            for (name, ct) in self.ensure_image(f)? {
                let nodes = self.cluster.place(&name, k + 1).map_err(|_| FetchError::NotFound { chunk_index: 0, name })?;
                for s in erasure::encode(&ct, k).expect("k validated").stripes {
                    self.cluster.send(nodes[s.index as usize], &L2Request::Put { name, stripe: s.index, bytes: Arc::from(s.bytes) });
                }
            }
        }
        for id in self.cluster.node_ids() {
            self.cluster.node(id).unwrap().lock().take_evictions();
        }
        Ok(())
    }

    fn bucket_mut(&mut self, i: usize) -> &mut Bucket {
        if i >= self.buckets.len() {
            let w = self.cfg.bucket;
            let from = self.buckets.len();
            self.buckets.extend((from..=i).map(|b| Bucket { start: b as f64 * w, ..Default::default() }));
        }
        &mut self.buckets[i]
    }

    fn bucket_index(&self, t: f64) -> usize {
        (t / self.cfg.bucket).floor() as usize
    }

    /// Moves the clock to `t`, integrating in-flight starts over time.
    fn advance(&mut self, t: f64) {
        let w = self.cfg.bucket;
        let level = self.in_flight;
        let mut a = self.clock;
        while a < t {
            let b = self.bucket_index(a);
            let mut end = ((b + 1) as f64 * w).min(t);
            if end <= a {
                end = t;
            }
            let bucket = self.bucket_mut(b);
            bucket.mean_in_flight += (end - a) * level as f64;
            bucket.max_in_flight = bucket.max_in_flight.max(level);
            a = end;
        }
        self.clock = t;
    }

    fn rate_at(&self, t: f64) -> f64 {
        let w = &self.cfg.workload;
        let mult: f64 = w.spikes.iter().filter(|s| t >= s.start && t < s.start + s.duration).map(|s| s.multiplier).product();
        w.arrival_rate * mult
    }

    pub(crate) fn run(mut self) -> Result<MetricsReport, SimError> {
        while let Some(ev) = self.queue.pop() {
            self.advance(ev.time);
            match ev.kind {
                Kind::Arrival => {
                    if ev.time >= self.cfg.duration {
                        continue;
                    }
                    // Thinning against the peak rate handles spikes exactly.
                    if self.sampler.uniform() * self.max_rate < self.rate_at(ev.time) {
                        let f = self.sampler.sample(&self.zipf) as u64 - 1;
                        self.start(f)?;
                    }
                    let gap = self.sampler.sample(&Exp::new(self.max_rate).unwrap());
                    self.push(ev.time + gap, Kind::Arrival);
                }
                Kind::Cron(f) => self.start(f)?,
                Kind::Complete => {
                    self.in_flight -= 1;
                    let b = self.bucket_index(ev.time);
                    self.bucket_mut(b).completed += 1;
                }
                Kind::Node(id, up) => self.cluster.set_up(id, up),
                Kind::Flush => {
                    self.cluster.flush();
                    for w in &self.workers {
                        w.l1().clear();
                    }
                }
            }
        }
        Ok(self.finish())
    }

    fn start(&mut self, function: u64) -> Result<(), SimError> {
        let now = self.clock;
        let b = self.bucket_index(now);
        self.bucket_mut(b).arrived += 1;
        if self.cfg.limiter.max_in_flight.is_some_and(|m| self.in_flight >= m) {
            self.bucket_mut(b).rejected += 1;
            return Ok(());
        }
        self.in_flight += 1;
        let level = self.in_flight;
        {
            let bucket = self.bucket_mut(b);
            bucket.admitted += 1;
            bucket.max_in_flight = bucket.max_in_flight.max(level);
        }

        self.ensure_image(function)?;
        let id = self.manifests[&function];
        let sealed = SealedManifest::from_bytes(&self.store.get(self.root, ObjectKind::Manifest, &id)?)?;
        let opened = open_manifest(&sealed, &self.customer)?;

        let worker = if self.cfg.topology.affinity {
            (function % self.workers.len() as u64) as usize
        } else {
            let w = self.next_worker;
            self.next_worker = (w + 1) % self.workers.len();
            w
        };
        let origin_factor = if self.cfg.feedback.enabled { (level as f64 / self.cfg.feedback.origin_capacity).max(1.0) } else { 1.0 };
        let hot = !self.is_cron(function);
        let par = self.cfg.topology.fetch_parallelism as usize;

        let mut clock = StartClock {
            rng: self.latencies.next_rng(),
            model: &self.cfg.latency,
            l2: self.l2,
            origin: self.origin,
            origin_factor,
            l2_requests: 0,
            slow_touched: false,
        };
        let mut latency = self.manifest.draw(&mut clock.rng);
        let (mut l1, mut l2, mut l3, mut hot_hits) = (0u64, 0u64, 0u64, 0u64);
        let mut batch = 0.0f64;
        let mut slowest = 0.0f64;
        for (j, &idx) in self.touched.iter().enumerate() {
            let r = self.workers[worker].fetch_chunk(idx as u64, &opened.entry(idx), &mut clock)?;
            match r.source {
                CacheTier::L1 => l1 += 1,
                CacheTier::L2 => {
                    l2 += 1;
                    hot_hits += hot as u64;
                }
                CacheTier::L3 => l3 += 1,
            }
            self.chunk_latencies.push(r.timing.total);
            slowest = slowest.max(r.timing.total);
            batch = batch.max(r.timing.total);
            if (j + 1) % par == 0 || j + 1 == self.touched.len() {
                latency += batch;
                batch = 0.0;
            }
        }
        let (requests, touched_slow) = (clock.l2_requests, clock.slow_touched);

        let slow = self.cfg.latency.slow_nodes.iter().filter(|s| s.factor != 1.0).count() as f64;
        self.slow_analytic_sum += 1.0 - (1.0 - slow / self.cfg.topology.l2_nodes as f64).powi(requests as i32);
        self.slow_touches += touched_slow as u64;
        self.l2_request_total += requests as u64;
        self.start_latencies.push(latency);
        self.start_max_chunk.push(slowest);

        let mut hot_evictions = 0;
        for id in self.cluster.node_ids() {
            let evicted = self.cluster.node(id).unwrap().lock().take_evictions();
            hot_evictions += evicted.iter().filter(|(n, _)| self.hot_names.contains(n)).count() as u64;
        }

        let bucket = self.bucket_mut(b);
        bucket.requests += l1 + l2 + l3;
        bucket.l1_hits += l1;
        bucket.l2_hits += l2;
        bucket.origin_fetches += l3;
        if hot {
            bucket.hot_lookups += l2 + l3;
            bucket.hot_l2_hits += hot_hits;
        }
        bucket.hot_evictions += hot_evictions;
        bucket.admitted_latency_sum += latency;
        self.push(now + latency, Kind::Complete);
        Ok(())
    }

    fn finish(mut self) -> MetricsReport {
        let width = self.cfg.bucket;
        let duration = self.cfg.duration;
        let end = self.bucket_index(duration.max(self.clock));
        self.bucket_mut(end);
        for b in &mut self.buckets {
            b.finish(width);
        }

        let sum = |f: fn(&Bucket) -> u64| self.buckets.iter().map(f).sum::<u64>();
        let (l2_hits, origin_fetches) = (sum(|b| b.l2_hits), sum(|b| b.origin_fetches));
        let starts = self.start_latencies.len();
        let chunk_latency = LatencyStats::of(&self.chunk_latencies);
        let tail_starts = self.start_max_chunk.iter().filter(|&&m| m > chunk_latency.p999).count();
        let per_start = |x: f64| if starts == 0 { 0.0 } else { x / starts as f64 };

        // Steady window: whole buckets in the second half of the run.
        let first = (0.5 * duration / width).ceil() as usize;
        let last = ((duration / width).floor() as usize).min(self.buckets.len());
        let little = (first < last).then(|| {
            let span = &self.buckets[first..last];
            let t = (last - first) as f64 * width;
            let admitted: u64 = span.iter().map(|b| b.admitted).sum();
            let mean_in_flight = span.iter().map(|b| b.mean_in_flight).sum::<f64>() * width / t;
            let throughput = admitted as f64 / t;
            let mean_latency = if admitted == 0 { 0.0 } else { span.iter().map(|b| b.admitted_latency_sum).sum::<f64>() / admitted as f64 };
            let predicted = throughput * mean_latency;
            let relative_error = if predicted > 0.0 { (mean_in_flight - predicted).abs() / predicted } else { 0.0 };
            LittleCheck { window_start: first as f64 * width, window_end: last as f64 * width, mean_in_flight, throughput, mean_latency, relative_error }
        });

        let summary = Summary {
            starts_arrived: sum(|b| b.arrived),
            starts_admitted: sum(|b| b.admitted),
            starts_rejected: sum(|b| b.rejected),
            chunk_requests: sum(|b| b.requests),
            l1_hits: sum(|b| b.l1_hits),
            l2_hits,
            origin_fetches,
            l2_hit_rate: (l2_hits + origin_fetches > 0).then(|| l2_hits as f64 / (l2_hits + origin_fetches) as f64),
            max_in_flight: self.buckets.iter().map(|b| b.max_in_flight).max().unwrap_or(0),
            start_latency: LatencyStats::of(&self.start_latencies),
            chunk_latency,
            tail_start_fraction: per_start(tail_starts as f64),
            slow_touch_fraction: per_start(self.slow_touches as f64),
            slow_touch_analytic: per_start(self.slow_analytic_sum),
            mean_l2_requests_per_start: per_start(self.l2_request_total as f64),
            images: self.manifests.len() as u64,
            unique_chunks: self.unique_chunks,
            dedup_ratio: if self.unique_chunks == 0 { 0.0 } else { self.chunk_refs as f64 / self.unique_chunks as f64 },
            little,
        };
        MetricsReport {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            bucket_width: width,
            summary,
            start_latency_ecdf: ecdf_points(&self.start_latencies),
            chunk_latency_ecdf: quantile_points(&self.chunk_latencies, 1000),
            buckets: self.buckets,
            start_latencies: self.start_latencies,
            chunk_latencies: self.chunk_latencies,
        }
    }
}

/// Runs one simulation to completion.
pub fn run_sim(cfg: &SimConfig) -> Result<MetricsReport, SimError> {
    Simulation::new(cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests::MINIMAL;
    use crate::config::{FeedbackConfig, Outage, Spike};

    fn cfg() -> SimConfig {
        SimConfig::from_toml(MINIMAL).unwrap()
    }

    #[test]
    fn zero_latency_single_function_is_reproducible() {
        let mut c = cfg();
        c.workload.functions = 1;
        c.latency = LatencyModel::zero();
        let a = run_sim(&c).unwrap();
        let b = run_sim(&c).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.summary.starts_admitted > 20);
        assert_eq!(a.summary.start_latency.max, 0.0);
    }

    #[test]
    fn seeds_change_the_run() {
        let mut c = cfg();
        let a = run_sim(&c).unwrap();
        c.seed += 1;
        assert_ne!(a.to_json(), run_sim(&c).unwrap().to_json());
    }

    #[test]
    fn every_bucket_conserves_requests() {
        let mut c = cfg();
        c.duration = 30.0;
        c.workload.arrival_rate = 40.0;
        c.workload.zipf_s = 1.0;
        let r = run_sim(&c).unwrap();
        let mut seen = 0;
        for b in &r.buckets {
            assert_eq!(b.l1_hits + b.l2_hits + b.origin_fetches, b.requests);
            if b.requests > 0 {
                seen += 1;
                let sum = b.l1_fraction.unwrap() + b.l2_fraction.unwrap() + b.origin_fraction.unwrap();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(seen >= 29);
        assert_eq!(r.summary.chunk_requests, r.summary.starts_admitted * 6);
        // All three tiers are exercised.
        assert!(r.summary.l1_hits > 0 && r.summary.l2_hits > 0 && r.summary.origin_fetches > 0);
    }

    #[test]
    fn littles_law_holds_with_feedback() {
        let mut c = cfg();
        c.duration = 60.0;
        c.workload.functions = 200;
        c.workload.arrival_rate = 1000.0;
        c.workload.zipf_s = 1.0;
        c.topology.l1_bytes = 1024;
        c.feedback = FeedbackConfig { enabled: true, origin_capacity: 2.0 };
        let r = run_sim(&c).unwrap();
        let l = r.summary.little.unwrap();
        assert!(l.mean_in_flight > 1.0, "{l:?}");
        assert!(l.relative_error < 0.05, "{l:?}");
    }

    #[test]
    fn limiter_caps_in_flight_and_counts_rejections() {
        let mut c = cfg();
        c.workload.arrival_rate = 500.0;
        c.latency.origin.median = 0.5;
        c.limiter.max_in_flight = Some(8);
        let r = run_sim(&c).unwrap();
        assert!(r.buckets.iter().all(|b| b.max_in_flight <= 8));
        assert_eq!(r.summary.max_in_flight, 8);
        assert!(r.summary.starts_rejected > 0);
        assert_eq!(r.summary.starts_admitted + r.summary.starts_rejected, r.summary.starts_arrived);
        assert_eq!(r.buckets.iter().map(|b| b.completed).sum::<u64>(), r.summary.starts_admitted);
    }

    #[test]
    fn spikes_raise_the_arrival_rate() {
        let mut c = cfg();
        c.duration = 20.0;
        c.workload.arrival_rate = 20.0;
        c.workload.spikes = vec![Spike { start: 10.0, duration: 5.0, multiplier: 5.0 }];
        let r = run_sim(&c).unwrap();
        let arrived = |range: std::ops::Range<usize>| r.buckets[range].iter().map(|b| b.arrived).sum::<u64>() as f64 / 5.0;
        let (before, during) = (arrived(5..10), arrived(10..15));
        assert!((before / 20.0 - 1.0).abs() < 0.3, "{before}");
        assert!((during / 100.0 - 1.0).abs() < 0.2, "{during}");
    }

    #[test]
    fn outages_are_survived_through_substitution() {
        let mut c = cfg();
        c.duration = 20.0;
        c.topology.l1_bytes = 0;
        c.latency.outages = vec![Outage { node: 1, from: 5.0, until: 15.0 }];
        let r = run_sim(&c).unwrap();
        // Every fetch still completes; lookups hit L2 once the ring has
        // re-homed the down node's stripes.
        assert_eq!(r.summary.chunk_requests, r.summary.starts_admitted * 6);
        assert!(r.buckets[12].l2_hit_rate.unwrap() > 0.5);
    }

    #[test]
    fn affinity_improves_l1_reuse() {
        let mut c = cfg();
        c.duration = 30.0;
        c.topology.workers = 8;
        let rr = run_sim(&c).unwrap().summary.l1_hits;
        c.topology.affinity = true;
        let aff = run_sim(&c).unwrap().summary.l1_hits;
        assert!(aff > rr, "{aff} vs {rr}");
    }

    #[test]
    fn dedup_ratio_counts_shared_bases() {
        let mut c = cfg();
        c.workload.functions = 4;
        c.workload.base_chunks = 10;
        c.workload.unique_chunks = 5;
        c.workload.arrival_rate = 0.0;
        c.topology.prewarm_l2 = true;
        let r = run_sim(&c).unwrap();
        // 4 images of 15 chunks over 10 shared + 4 * 5 unique chunks.
        assert_eq!(r.summary.images, 4);
        assert_eq!(r.summary.unique_chunks, 30);
        assert_eq!(r.summary.dedup_ratio, 2.0);
        assert_eq!(r.summary.starts_arrived, 0);
    }

    #[test]
    fn prewarmed_l2_serves_everything() {
        let mut c = cfg();
        c.topology.prewarm_l2 = true;
        c.topology.l1_bytes = 0;
        let r = run_sim(&c).unwrap();
        assert_eq!(r.summary.origin_fetches, 0);
        assert_eq!(r.summary.l2_hit_rate, Some(1.0));
    }
}
