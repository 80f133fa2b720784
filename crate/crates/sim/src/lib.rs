//! Seeded discrete-event simulator over virtual time.
//!
//! Container starts arrive as a (possibly spiking) Poisson process plus
//! periodic cron bursts, open their manifest, and fetch their touched chunks
//! through real [`TieredCache`](lazyblock_core::cache::TieredCache) instances
//! backed by an in-memory origin. Only time is simulated: cache contents,
//! erasure coding and decryption all run for real on tiny chunks.

pub mod config;
mod engine;
pub mod experiments;
pub mod latency;
pub mod report;

pub use config::{ConfigError, LatencyModel, Mode, SimConfig, Topology, WorkloadSpec};
pub use engine::{run_sim, SimError};
pub use experiments::{
    cold_start_drill, run_mode, scan_resistance_experiment, tail_latency_experiment, DrillReport, ModeReport, ScanReport, TailReport,
};
pub use report::{Bucket, MetricsReport, Summary};
