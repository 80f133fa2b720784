use std::io;
use std::path::{Path, PathBuf};

use lazyblock_core::cache::Redundancy;
use serde::Serialize;

use crate::config::{Mode, SimConfig};
use crate::engine::{run_sim, SimError};
use crate::report::{write_report, MetricsReport, Summary};

#[derive(Debug, Clone, Serialize)]
pub struct DrillReport {
    pub flush_at: f64,
    pub max_in_flight_limit: Option<u32>,
    pub pre_flush_l2_hit_rate: f64,
    /// Largest minus smallest baseline bucket hit rate.
    pub baseline_spread: f64,
    /// Buckets from time zero until the L2 hit rate first regains the target.
    pub warmup_buckets: Option<usize>,
    /// Buckets from the flush until the L2 hit rate first regains the target.
    pub recovery_buckets: Option<usize>,
    pub max_backlog: u32,
    pub post_flush_max_backlog: u32,
    pub rejected_during_recovery: u64,
    pub rejected_total: u64,
    pub metrics: MetricsReport,
}

fn first_at_or_above(rates: &[Option<f64>], from: usize, target: f64) -> Option<usize> {
    rates.iter().skip(from).position(|r| r.is_some_and(|r| r >= target)).map(|i| i + 1)
}

/// Runs with a flush of every cache at `drill.flush_at` and measures how the
/// L2 hit rate and the backlog of in-flight starts respond.
pub fn cold_start_drill(cfg: &SimConfig) -> Result<DrillReport, SimError> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::ColdStart;
    cfg.validate()?;
    let d = cfg.drill.clone().expect("validated");
    let metrics = run_sim(&cfg)?;
    let w = cfg.bucket;
    let flush_bucket = (d.flush_at / w).floor() as usize;
    // First bucket that lies wholly after the flush.
    let after = (d.flush_at / w).ceil() as usize;
    let rates: Vec<Option<f64>> = metrics.buckets.iter().map(|b| b.l2_hit_rate).collect();

    let base = flush_bucket.checked_sub(d.baseline_buckets as usize).map(|s| &rates[s..flush_bucket]);
    let baseline: Vec<f64> = base.map(|b| b.iter().flatten().copied().collect()).unwrap_or_default();
    if baseline.len() < d.baseline_buckets as usize {
        return Err(SimError::NotSteady { spread: f64::INFINITY });
    }
    let hi = baseline.iter().copied().fold(f64::MIN, f64::max);
    let lo = baseline.iter().copied().fold(f64::MAX, f64::min);
    if hi - lo > d.steady_tolerance {
        return Err(SimError::NotSteady { spread: hi - lo });
    }
    let pre = baseline.iter().sum::<f64>() / baseline.len() as f64;
    let target = d.recovery_fraction * pre;
    let recovery_buckets = first_at_or_above(&rates, after, target);
    let recovered_by = recovery_buckets.map_or(metrics.buckets.len(), |n| after + n);
    Ok(DrillReport {
        flush_at: d.flush_at,
        max_in_flight_limit: cfg.limiter.max_in_flight,
        pre_flush_l2_hit_rate: pre,
        baseline_spread: hi - lo,
        warmup_buckets: first_at_or_above(&rates, 0, target),
        recovery_buckets,
        max_backlog: metrics.summary.max_in_flight,
        post_flush_max_backlog: metrics.buckets[flush_bucket..].iter().map(|b| b.max_in_flight).max().unwrap_or(0),
        rejected_during_recovery: metrics.buckets[flush_bucket..recovered_by].iter().map(|b| b.rejected).sum(),
        rejected_total: metrics.summary.starts_rejected,
        metrics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanPolicy {
    pub lru_k: usize,
    /// Mean steady-function L2 hit rate over the second half of the pre-burst period.
    pub baseline_hot_hit_rate: f64,
    pub min_hot_hit_rate: f64,
    pub dip: f64,
    pub hot_evictions_after_burst: u64,
    /// `(bucket start, steady-function L2 hit rate)`.
    pub series: Vec<(f64, Option<f64>)>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub burst_at: f64,
    pub policies: Vec<ScanPolicy>,
}

impl ScanReport {
    pub fn policy(&self, k: usize) -> Option<&ScanPolicy> {
        self.policies.iter().find(|p| p.lru_k == k)
    }
}

/// Paired same-seed runs differing only in the L2 (and L1) history depth.
pub fn scan_resistance_experiment(cfg: &SimConfig) -> Result<ScanReport, SimError> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Scan;
    cfg.validate()?;
    let burst_at = cfg.workload.cron.as_ref().expect("validated").first;
    let policies = cfg.scan.clone().map_or_else(|| vec![1, 2], |s| s.policies);
    let w = cfg.bucket;
    let burst_bucket = (burst_at / w).floor() as usize;
    let mut out = Vec::new();
    for k in policies {
        let mut c = cfg.clone();
        c.topology.lru_k = k;
        let metrics = run_sim(&c)?;
        let series: Vec<(f64, Option<f64>)> = metrics.buckets.iter().map(|b| (b.start, b.hot_l2_hit_rate)).collect();
        let pre: Vec<f64> = series[burst_bucket / 2..burst_bucket.min(series.len())].iter().filter_map(|s| s.1).collect();
        let baseline = if pre.is_empty() { 0.0 } else { pre.iter().sum::<f64>() / pre.len() as f64 };
        let end = ((cfg.duration / w).floor() as usize).min(series.len());
        let min = series[burst_bucket.min(end)..end].iter().filter_map(|s| s.1).fold(baseline, f64::min);
        out.push(ScanPolicy {
            lru_k: k,
            baseline_hot_hit_rate: baseline,
            min_hot_hit_rate: min,
            dip: baseline - min,
            hot_evictions_after_burst: metrics.buckets.iter().skip(burst_bucket).map(|b| b.hot_evictions).sum(),
            series,
            metrics,
        });
    }
    Ok(ScanReport { burst_at, policies: out })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    /// Every fetch requests exactly `k` stripes.
    pub exact: Summary,
    /// Every fetch requests `k + 1` stripes and uses the first `k`.
    pub one_extra: Summary,
    /// `one_extra` again with no slow nodes: chunk latencies are iid.
    pub iid: Option<Summary>,
}

/// Same seed and workload under both redundancy policies.
pub fn tail_latency_experiment(cfg: &SimConfig) -> Result<TailReport, SimError> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Tail;
    cfg.validate()?;
    let run = |r: Redundancy, slow: bool| {
        let mut c = cfg.clone();
        c.topology.redundancy = r;
        if !slow {
            c.latency.slow_nodes.clear();
        }
        run_sim(&c).map(|m| m.summary)
    };
    let iid = if cfg.tail.as_ref().is_none_or(|t| t.iid_baseline) { Some(run(Redundancy::OneExtra, false)?) } else { None };
    Ok(TailReport { exact: run(Redundancy::Exact, true)?, one_extra: run(Redundancy::OneExtra, true)?, iid })
}

/// Result of whichever experiment the config's mode selects.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ModeReport {
    Run(MetricsReport),
    ColdStart(DrillReport),
    Scan(ScanReport),
    Tail(TailReport),
}

pub fn run_mode(cfg: &SimConfig) -> Result<ModeReport, SimError> {
    Ok(match cfg.mode {
        Mode::Run => ModeReport::Run(run_sim(cfg)?),
        Mode::ColdStart => ModeReport::ColdStart(cold_start_drill(cfg)?),
        Mode::Scan => ModeReport::Scan(scan_resistance_experiment(cfg)?),
        Mode::Tail => ModeReport::Tail(tail_latency_experiment(cfg)?),
    })
}

impl ModeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json` plus per-run bucket and eCDF tables into `dir`.
    pub fn write_files(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        match self {
            ModeReport::Run(m) => files.extend(write_report(dir, "run", m)?),
            ModeReport::ColdStart(d) => files.extend(write_report(dir, "drill", &d.metrics)?),
            ModeReport::Scan(s) => {
                for p in &s.policies {
                    files.extend(write_report(dir, &format!("lru-{}", p.lru_k), &p.metrics)?);
                }
            }
            ModeReport::Tail(_) => {}
        }
        let summary = dir.join("report.json");
        std::fs::write(&summary, self.to_json())?;
        files.push(summary);
        Ok(files)
    }
}
