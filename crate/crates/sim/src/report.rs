use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lazyblock_core::stats::{ecdf, percentile_sorted};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcdfPoint {
    pub value: f64,
    pub cumulative_fraction: f64,
}

/// Exact eCDF over distinct values.
pub fn ecdf_points(samples: &[f64]) -> Vec<EcdfPoint> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    ecdf(&v).into_iter().map(|(value, cumulative_fraction)| EcdfPoint { value, cumulative_fraction }).collect()
}

/// eCDF evaluated at `points` evenly spaced quantiles, for large sample sets.
pub fn quantile_points(samples: &[f64], points: usize) -> Vec<EcdfPoint> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    if v.len() <= points {
        return ecdf(&v).into_iter().map(|(value, cumulative_fraction)| EcdfPoint { value, cumulative_fraction }).collect();
    }
    (1..=points)
        .map(|i| {
            let q = i as f64 / points as f64;
            EcdfPoint { value: percentile_sorted(&v, q).unwrap(), cumulative_fraction: q }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub p999: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let p = |q| percentile_sorted(&v, q).unwrap();
        LatencyStats {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: p(0.5),
            p99: p(0.99),
            p999: p(0.999),
            max: *v.last().unwrap(),
        }
    }
}

/// One metrics time bucket. Chunk requests are attributed to the bucket in
/// which their start was dispatched.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Bucket {
    pub start: f64,
    pub requests: u64,
    pub l1_hits: u64,
    pub l2_hits: u64,
    pub origin_fetches: u64,
    pub l1_fraction: Option<f64>,
    pub l2_fraction: Option<f64>,
    pub origin_fraction: Option<f64>,
    /// L2 hits over requests that reached L2.
    pub l2_hit_rate: Option<f64>,
    /// Requests from steady (non-cron) functions that reached L2.
    pub hot_lookups: u64,
    pub hot_l2_hits: u64,
    pub hot_l2_hit_rate: Option<f64>,
    /// L2 stripes of steady functions evicted in this bucket.
    pub hot_evictions: u64,
    pub arrived: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub completed: u64,
    pub max_in_flight: u32,
    pub mean_in_flight: f64,
    /// Sum of latencies of starts admitted in this bucket.
    pub admitted_latency_sum: f64,
}

impl Bucket {
    pub(crate) fn finish(&mut self, width: f64) {
        let frac = |n: u64, d: u64| (d > 0).then(|| n as f64 / d as f64);
        self.l1_fraction = frac(self.l1_hits, self.requests);
        self.l2_fraction = frac(self.l2_hits, self.requests);
        self.origin_fraction = frac(self.origin_fetches, self.requests);
        self.l2_hit_rate = frac(self.l2_hits, self.l2_hits + self.origin_fetches);
        self.hot_l2_hit_rate = frac(self.hot_l2_hits, self.hot_lookups);
        self.mean_in_flight /= width;
    }
}

/// Time-averaged in-flight starts against throughput times mean latency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LittleCheck {
    pub window_start: f64,
    pub window_end: f64,
    pub mean_in_flight: f64,
    pub throughput: f64,
    pub mean_latency: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub starts_arrived: u64,
    pub starts_admitted: u64,
    pub starts_rejected: u64,
    pub chunk_requests: u64,
    pub l1_hits: u64,
    pub l2_hits: u64,
    pub origin_fetches: u64,
    pub l2_hit_rate: Option<f64>,
    pub max_in_flight: u32,
    pub start_latency: LatencyStats,
    pub chunk_latency: LatencyStats,
    /// Starts with at least one chunk fetch slower than the chunk p99.9.
    pub tail_start_fraction: f64,
    /// Starts that sent at least one L2 request to a slow node.
    pub slow_touch_fraction: f64,
    /// Mean over starts of `1 - (1 - slow/nodes)^requests`.
    pub slow_touch_analytic: f64,
    pub mean_l2_requests_per_start: f64,
    pub images: u64,
    pub unique_chunks: u64,
    /// Chunk references across built images over distinct chunks.
    pub dedup_ratio: f64,
    pub little: Option<LittleCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub bucket_width: f64,
    pub summary: Summary,
    pub buckets: Vec<Bucket>,
    pub start_latency_ecdf: Vec<EcdfPoint>,
    pub chunk_latency_ecdf: Vec<EcdfPoint>,
    #[serde(skip)]
    pub start_latencies: Vec<f64>,
    #[serde(skip)]
    pub chunk_latencies: Vec<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn write_ecdf_csv(path: &Path, points: &[EcdfPoint]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()
}

pub fn write_buckets_csv(path: &Path, buckets: &[Bucket]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in buckets {
        w.serialize(b)?;
    }
    w.flush()
}

/// Writes `<stem>.json`, the bucket table and both latency eCDFs into `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, report.to_json())?;
    let buckets = dir.join(format!("{stem}-buckets.csv"));
    write_buckets_csv(&buckets, &report.buckets)?;
    let starts = dir.join(format!("{stem}-start-latency.csv"));
    write_ecdf_csv(&starts, &report.start_latency_ecdf)?;
    let chunks = dir.join(format!("{stem}-chunk-latency.csv"));
    write_ecdf_csv(&chunks, &report.chunk_latency_ecdf)?;
    Ok(vec![json, buckets, starts, chunks])
}
