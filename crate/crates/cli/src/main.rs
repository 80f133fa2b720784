//! `lazyblock`: flatten and upload images, replay reads, drive the root
//! lifecycle and run simulations.
//!
//! Exit status: 0 success, 2 invalid input, 3 integrity failure, 4 lifecycle
//! refusal, 1 anything else.

mod commands;
mod config;
mod exit;
mod state;
mod trace;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::{GcVerb, Outcome, ReadBench};
use crate::config::StoreConfig;

#[derive(Debug, Parser)]
#[command(name = "lazyblock", version, about = "Chunked, deduplicated container images loaded on demand")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Store config (TOML). Defaults to `<store>/config.toml`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the result as JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Create a store with its first root and a customer key.
    Init,
    /// Collapse layer tarballs (lowest first) into a flat image.
    Flatten {
        #[arg(required = true)]
        layers: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Encrypt and store an image; prints the manifest id and unique-chunk fraction.
    Upload {
        image: PathBuf,
        #[arg(long)]
        key_id: Option<String>,
    },
    /// Replay an access trace against a stored image through the caches.
    ReadBench {
        manifest: String,
        /// `R <offset> <len>` / `W <offset> <hex>` lines. Default: random page reads.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Fraction of pages the default trace reads.
        #[arg(long, default_value_t = 0.064)]
        fraction: f64,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long)]
        key_id: Option<String>,
        /// Print one line per operation.
        #[arg(long)]
        per_read: bool,
    },
    /// Root lifecycle operations.
    Gc {
        #[command(subcommand)]
        verb: GcVerb,
    },
    /// Run a simulator config and write its reports.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Deduplication and storage summary.
    Stats,
    /// Print a random 32-byte key in keyfile hex.
    Keygen,
}

fn store_dir(cli: &Cli) -> Result<&Path> {
    cli.store.as_deref().ok_or_else(commands::missing_store)
}

fn run(cli: &Cli) -> Result<(Option<String>, Outcome)> {
    // Simulation and key generation do not touch the store config.
    match &cli.cmd {
        Cmd::Simulate { config, out } => return Ok((None, commands::simulate(config, out, cli.seed)?)),
        Cmd::Keygen => return Ok((None, commands::keygen(cli.seed))),
        _ => {}
    }
    let cfg = StoreConfig::load(cli.config.as_deref(), cli.store.as_deref())?;
    let hash = Some(cfg.hash());
    let out = match &cli.cmd {
        Cmd::Init => commands::init(store_dir(cli)?, cfg, cli.seed)?,
        Cmd::Flatten { layers, out } => commands::flatten(layers, out, &cfg)?,
        Cmd::Upload { image, key_id } => commands::upload(store_dir(cli)?, cfg, image, key_id.as_deref(), cli.seed)?,
        Cmd::ReadBench { manifest, trace, fraction, passes, key_id, per_read } => {
            let args = ReadBench {
                manifest,
                trace: trace.as_deref(),
                fraction: *fraction,
                passes: *passes,
                key_id: key_id.as_deref(),
                per_read: *per_read,
            };
            commands::read_bench(store_dir(cli)?, cfg, args, cli.seed)?
        }
        Cmd::Gc { verb } => commands::gc(store_dir(cli)?, cfg, verb)?,
        Cmd::Stats => commands::stats(store_dir(cli)?, cfg)?,
        Cmd::Simulate { .. } | Cmd::Keygen => unreachable!(),
    };
    Ok((hash, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((hash, out)) => {
            if cli.json {
                let mut v = out.json;
                if let (Some(h), Some(obj)) = (hash, v.as_object_mut()) {
                    obj.insert("config_hash".into(), h.into());
                }
                println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            } else {
                if let Some(h) = hash {
                    println!("config {h}");
                }
                print!("{}", out.human);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit::code_for(&e);
            if cli.json {
                let v = serde_json::json!({ "error": format!("{e:#}"), "exit_code": code });
                println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            }
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
