//! Simulation configuration, loaded from TOML.
//!
//! All times are in seconds, sizes in bytes.

use lazyblock_core::cache::{NodeId, Redundancy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Run,
    ColdStart,
    Scan,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub mode: Mode,
    pub seed: u64,
    /// Arrivals stop at this time; in-flight starts still complete.
    pub duration: f64,
    /// Width of a metrics time bucket.
    pub bucket: f64,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub latency: LatencyModel,
    pub topology: Topology,
    #[serde(default)]
    pub limiter: LimiterConfig,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub drill: Option<DrillConfig>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub tail: Option<TailConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Size of the steady (non-cron) function population.
    pub functions: u32,
    /// Number of distinct shared base images.
    #[serde(default = "one")]
    pub bases: u32,
    pub base_chunks: u32,
    pub unique_chunks: u32,
    /// Zipf exponent over the function population; 0 is uniform.
    #[serde(default)]
    pub zipf_s: f64,
    /// Starts per second before spikes.
    pub arrival_rate: f64,
    #[serde(default)]
    pub spikes: Vec<Spike>,
    pub touched_chunks: u32,
    #[serde(default = "default_chunk_bytes")]
    pub chunk_bytes: usize,
    #[serde(default)]
    pub cron: Option<CronSpec>,
}

fn one() -> u32 {
    1
}

fn default_chunk_bytes() -> usize {
    64
}

impl WorkloadSpec {
    pub fn chunks_per_image(&self) -> u32 {
        self.base_chunks + self.unique_chunks
    }
}

/// Multiplies the arrival rate by `multiplier` during `[start, start + duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spike {
    pub start: f64,
    pub duration: f64,
    pub multiplier: f64,
}

/// Periodic bursts of one-shot functions whose images share nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CronSpec {
    pub first: f64,
    pub period: f64,
    pub functions: u32,
    /// Starts of one burst are spread evenly over this many seconds.
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalSpec {
    pub median: f64,
    pub sigma: f64,
}

/// Per-tier latency distributions. Defaults are illustrative only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    #[serde(default = "default_l2")]
    pub l2: LogNormalSpec,
    #[serde(default = "default_origin")]
    pub origin: LogNormalSpec,
    /// Manifest open; defaults to the L2 distribution.
    #[serde(default)]
    pub manifest: Option<LogNormalSpec>,
    #[serde(default)]
    pub slow_nodes: Vec<SlowNode>,
    #[serde(default)]
    pub outages: Vec<Outage>,
}

fn default_l2() -> LogNormalSpec {
    LogNormalSpec { median: 550e-6, sigma: 0.617 }
}

fn default_origin() -> LogNormalSpec {
    LogNormalSpec { median: 0.036, sigma: 0.512 }
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { l2: default_l2(), origin: default_origin(), manifest: None, slow_nodes: Vec::new(), outages: Vec::new() }
    }
}

impl LatencyModel {
    pub fn zero() -> Self {
        let z = LogNormalSpec { median: 0.0, sigma: 0.0 };
        LatencyModel { l2: z, origin: z, manifest: Some(z), ..Default::default() }
    }

    pub fn slow_factor(&self, node: NodeId) -> f64 {
        self.slow_nodes.iter().filter(|s| s.node == node).map(|s| s.factor).product()
    }
}

/// Every request to `node` takes `factor` times longer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowNode {
    pub node: NodeId,
    pub factor: f64,
}

/// Node `node` is down during `[from, until)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub node: NodeId,
    pub from: f64,
    pub until: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub workers: u32,
    pub l1_bytes: u64,
    pub l2_nodes: u32,
    pub l2_node_bytes: u64,
    #[serde(default = "default_vnodes")]
    pub vnodes: usize,
    #[serde(default = "two")]
    pub lru_k: usize,
    #[serde(default = "four")]
    pub erasure_k: usize,
    #[serde(default = "default_redundancy")]
    pub redundancy: Redundancy,
    /// Chunk fetches a start keeps outstanding at once.
    #[serde(default = "one")]
    pub fetch_parallelism: u32,
    /// Route every start of a function to the same worker.
    #[serde(default)]
    pub affinity: bool,
    /// Load every steady function's stripes into L2 before time zero.
    #[serde(default)]
    pub prewarm_l2: bool,
}

fn default_vnodes() -> usize {
    lazyblock_core::cache::DEFAULT_VNODES
}

fn two() -> usize {
    2
}

fn four() -> usize {
    4
}

fn default_redundancy() -> Redundancy {
    Redundancy::OneExtra
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimiterConfig {
    /// `None` disables the limiter.
    #[serde(default)]
    pub max_in_flight: Option<u32>,
}

/// Origin contention: each origin fetch is slowed by
/// `max(1, in_flight / origin_capacity)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub origin_capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrillConfig {
    /// Time at which L1 and L2 are flushed.
    pub flush_at: f64,
    /// Buckets before the flush averaged into the pre-flush hit rate.
    #[serde(default = "default_baseline")]
    pub baseline_buckets: u32,
    /// Largest spread of baseline hit rates still counted as steady.
    #[serde(default = "default_steady")]
    pub steady_tolerance: f64,
    #[serde(default = "default_recovery")]
    pub recovery_fraction: f64,
}

fn default_baseline() -> u32 {
    5
}

fn default_steady() -> f64 {
    0.05
}

fn default_recovery() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// LRU-k history depths to compare, run with the same seed.
    #[serde(default = "default_policies")]
    pub policies: Vec<usize>,
}

fn default_policies() -> Vec<usize> {
    vec![1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    /// Also run once with no slow nodes to check the iid tail rule.
    #[serde(default = "yes")]
    pub iid_baseline: bool,
}

fn yes() -> bool {
    true
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().trim().to_string();
            // Missing fields are reported against their parent table; name them.
            match message.strip_prefix("missing field `").and_then(|m| m.strip_suffix('`')) {
                Some(field) if path == "." => invalid(field, "missing field"),
                Some(field) => invalid(&format!("{path}.{field}"), "missing field"),
                None => invalid(&path, message),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |path: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(invalid(path, "must be > 0")) };
        let nonneg = |path: &str, v: f64| if v >= 0.0 && v.is_finite() { Ok(()) } else { Err(invalid(path, "must be >= 0")) };
        pos("duration", self.duration)?;
        pos("bucket", self.bucket)?;

        let w = &self.workload;
        if w.functions == 0 {
            return Err(invalid("workload.functions", "must be >= 1"));
        }
        if w.bases == 0 {
            return Err(invalid("workload.bases", "must be >= 1"));
        }
        if w.chunks_per_image() == 0 {
            return Err(invalid("workload.base_chunks", "image has no chunks"));
        }
        if w.touched_chunks == 0 || w.touched_chunks > w.chunks_per_image() {
            return Err(invalid("workload.touched_chunks", format!("must be in 1..={}", w.chunks_per_image())));
        }
        if w.chunk_bytes == 0 {
            return Err(invalid("workload.chunk_bytes", "must be >= 1"));
        }
        nonneg("workload.zipf_s", w.zipf_s)?;
        nonneg("workload.arrival_rate", w.arrival_rate)?;
        for (i, s) in w.spikes.iter().enumerate() {
            nonneg(&format!("workload.spikes[{i}].start"), s.start)?;
            nonneg(&format!("workload.spikes[{i}].duration"), s.duration)?;
            nonneg(&format!("workload.spikes[{i}].multiplier"), s.multiplier)?;
        }
        if let Some(c) = &w.cron {
            nonneg("workload.cron.first", c.first)?;
            pos("workload.cron.period", c.period)?;
            nonneg("workload.cron.spread", c.spread)?;
        }

        let l = &self.latency;
        for (path, d) in [("latency.l2", &l.l2), ("latency.origin", &l.origin)].into_iter().chain(l.manifest.as_ref().map(|m| ("latency.manifest", m))) {
            nonneg(&format!("{path}.median"), d.median)?;
            nonneg(&format!("{path}.sigma"), d.sigma)?;
        }
        let t = &self.topology;
        for (i, s) in l.slow_nodes.iter().enumerate() {
            if s.node >= t.l2_nodes {
                return Err(invalid(&format!("latency.slow_nodes[{i}].node"), "no such node"));
            }
            pos(&format!("latency.slow_nodes[{i}].factor"), s.factor)?;
        }
        for (i, o) in l.outages.iter().enumerate() {
            if o.node >= t.l2_nodes {
                return Err(invalid(&format!("latency.outages[{i}].node"), "no such node"));
            }
            if !(o.from >= 0.0 && o.until >= o.from) {
                return Err(invalid(&format!("latency.outages[{i}]"), "need 0 <= from <= until"));
            }
        }

        if t.workers == 0 {
            return Err(invalid("topology.workers", "must be >= 1"));
        }
        if t.l2_nodes == 0 {
            return Err(invalid("topology.l2_nodes", "must be >= 1"));
        }
        if t.vnodes == 0 {
            return Err(invalid("topology.vnodes", "must be >= 1"));
        }
        if t.lru_k == 0 {
            return Err(invalid("topology.lru_k", "must be >= 1"));
        }
        if !(1..=254).contains(&t.erasure_k) {
            return Err(invalid("topology.erasure_k", "must be in 1..=254"));
        }
        if t.fetch_parallelism == 0 {
            return Err(invalid("topology.fetch_parallelism", "must be >= 1"));
        }
        if self.limiter.max_in_flight == Some(0) {
            return Err(invalid("limiter.max_in_flight", "must be >= 1"));
        }
        if self.feedback.enabled {
            pos("feedback.origin_capacity", self.feedback.origin_capacity)?;
        }

        match self.mode {
            Mode::ColdStart => {
                let Some(d) = &self.drill else {
                    return Err(invalid("drill", "required when mode = \"cold-start\""));
                };
                if !(d.flush_at >= 0.0 && d.flush_at < self.duration) {
                    return Err(invalid("drill.flush_at", "must be within [0, duration)"));
                }
                if d.baseline_buckets == 0 {
                    return Err(invalid("drill.baseline_buckets", "must be >= 1"));
                }
                if !(d.recovery_fraction > 0.0 && d.recovery_fraction <= 1.0) {
                    return Err(invalid("drill.recovery_fraction", "must be in (0, 1]"));
                }
            }
            Mode::Scan => {
                if w.cron.is_none() {
                    return Err(invalid("workload.cron", "required when mode = \"scan\""));
                }
                if self.scan.as_ref().is_some_and(|s| s.policies.is_empty() || s.policies.contains(&0)) {
                    return Err(invalid("scan.policies", "need at least one k >= 1"));
                }
            }
            Mode::Run | Mode::Tail => {}
        }
        Ok(())
    }
}
