use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use lazyblock_core::blockdev::{CacheFetcher, DeviceView};
use lazyblock_core::cache::{
    FetchConfig, L1Cache, L2Cluster, Redundancy, StoreOrigin, Tier, TieredCache, ZeroLatency, DEFAULT_VNODES,
};
use lazyblock_core::crypto::{list_chunk_names, open_manifest, ChunkHash, SealedManifest};
use lazyblock_core::flattener::{apply_layers, import_tar_file, serialize_image, PAGE_SIZE};
use lazyblock_core::origin::{dedup_stats, ObjectKind, RootId, RootState};
use lazyblock_core::stats::percentile_sorted;
use lazyblock_core::upload::upload_reader;
use lazyblock_sim::{run_mode, ModeReport, SimConfig};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::StoreConfig;
use crate::exit::Invalid;
use crate::state::{Store, UploadRecord};
use crate::trace::{self, Op};

/// Human text plus the machine-readable form of a command's result.
pub struct Outcome {
    pub human: String,
    pub json: Value,
}

trait SeededRng: RngCore + CryptoRng {}
impl<T: RngCore + CryptoRng> SeededRng for T {}

/// Deterministic when `--seed` is given, OS-seeded otherwise.
fn rng(seed: Option<u64>) -> Box<dyn SeededRng> {
    match seed {
        Some(s) => Box::new(ChaCha20Rng::seed_from_u64(s)),
        None => Box::new(ChaCha20Rng::from_os_rng()),
    }
}

fn parse_manifest_id(s: &str) -> Result<ChunkHash> {
    s.parse().map_err(|e| Invalid(format!("manifest id {s:?}: {e}")).into())
}

fn parse_root(s: &str) -> Result<RootId> {
    s.parse().map_err(|e: String| Invalid(e).into())
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

pub fn init(dir: &Path, cfg: StoreConfig, seed: Option<u64>) -> Result<Outcome> {
    let mut key = [0u8; 32];
    rng(seed).fill_bytes(&mut key);
    let store = Store::init(dir, cfg, key)?;
    let active = store.gc.active_roots();
    Ok(Outcome {
        human: format!(
            "initialized {}\nactive roots: {}\n",
            dir.display(),
            active.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
        ),
        json: json!({ "store": dir, "active_roots": active, "key_id": store.config.key_id }),
    })
}

pub fn flatten(layers: &[PathBuf], out: &Path, cfg: &StoreConfig) -> Result<Outcome> {
    let mut archives = Vec::with_capacity(layers.len());
    for (i, path) in layers.iter().enumerate() {
        archives.push(import_tar_file(path, i).with_context(|| format!("layer {i} ({})", path.display()))?);
    }
    let tree = apply_layers(&archives)?;
    let image = serialize_image(&tree);
    fs::write(out, image.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    let chunks = image.len().div_ceil(cfg.chunk_size);
    let hash = ChunkHash::of(image.as_bytes());
    Ok(Outcome {
        human: format!(
            "wrote {}\nlength {} bytes, {} entries, {chunks} chunks of {} bytes\nsha256 {hash}\n",
            out.display(),
            image.len(),
            image.entry_count(),
            cfg.chunk_size
        ),
        json: json!({
            "image": out,
            "length": image.len(),
            "entries": image.entry_count(),
            "chunk_size": cfg.chunk_size,
            "chunks": chunks,
            "sha256": hash,
        }),
    })
}

pub fn upload(dir: &Path, cfg: StoreConfig, image: &Path, key_id: Option<&str>, seed: Option<u64>) -> Result<Outcome> {
    let mut store = Store::open(dir, cfg, true)?;
    let customer = store.customer_key(key_id)?;
    let routing = image.file_name().map(|n| n.as_encoded_bytes().to_vec()).unwrap_or_default();
    let root = store.gc.assign_root(&routing)?;
    let salt = store.config.salt_policy()?.salt_for(root);
    let file = File::open(image).with_context(|| format!("opening {}", image.display()))?;
    let report = upload_reader(
        &store.origin,
        root,
        BufReader::with_capacity(1 << 20, file),
        store.config.chunk_size,
        salt,
        &customer,
        &mut *rng(seed),
    )?;
    store.live.0.insert(report.manifest_id);
    store.uploads.push(UploadRecord {
        manifest: report.manifest_id,
        root,
        data_chunks: report.data_chunks,
        new_chunks: report.new_chunks,
    });
    store.save()?;
    Ok(Outcome {
        human: format!(
            "root {root}\nmanifest {}\nchunks {} ({} zero, {} data)\nunique chunks {} ({})\nmanifest {} bytes\n",
            report.manifest_id,
            report.chunk_count,
            report.zero_chunks,
            report.data_chunks,
            report.new_chunks,
            pct(report.unique_fraction),
            report.manifest_bytes
        ),
        json: serde_json::to_value(&report)?,
    })
}

#[derive(Debug, Default, Serialize)]
struct ReadRecord {
    pass: usize,
    #[serde(flatten)]
    op: Option<Op>,
    micros: f64,
    fetches: usize,
    l1: usize,
    l2: usize,
    l3: usize,
}

#[derive(Debug, Default, Serialize)]
struct PassSummary {
    pass: usize,
    reads: usize,
    writes: usize,
    bytes: u64,
    fetches: usize,
    l1: usize,
    l2: usize,
    l3: usize,
    l1_fraction: Option<f64>,
    p50_micros: f64,
    p99_micros: f64,
    max_micros: f64,
}

pub struct ReadBench<'a> {
    pub manifest: &'a str,
    pub trace: Option<&'a Path>,
    pub fraction: f64,
    pub passes: usize,
    pub key_id: Option<&'a str>,
    pub per_read: bool,
}

pub fn read_bench(dir: &Path, cfg: StoreConfig, args: ReadBench<'_>, seed: Option<u64>) -> Result<Outcome> {
    let id = parse_manifest_id(args.manifest)?;
    let store = Store::open(dir, cfg, true)?;
    // Reads can migrate manifests and raise alarms; persist both even when
    // the replay fails.
    let result = replay(&store, id, args, seed);
    store.save()?;
    result
}

fn replay(store: &Store, id: ChunkHash, args: ReadBench<'_>, seed: Option<u64>) -> Result<Outcome> {
    let customer = store.customer_key(args.key_id)?;
    let located = store.gc.read_manifest(&id, &store.live)?;
    let sealed = SealedManifest::from_bytes(&located.bytes).with_context(|| format!("manifest {id}"))?;
    let opened = open_manifest(&sealed, &customer).with_context(|| format!("manifest {id}"))?;
    let c = &store.config;
    let ops = match args.trace {
        Some(p) => trace::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => trace::random_pages(opened.image_length(), PAGE_SIZE, args.fraction, seed.unwrap_or(0)),
    };
    let touched = trace::chunks_touched(&ops, opened.chunk_size());
    let cluster = Arc::new(L2Cluster::new(c.l2_nodes, c.l2_node_bytes, c.lru_k, DEFAULT_VNODES));
    let origin = Arc::new(StoreOrigin { store: store.origin.clone(), root: located.root });
    let fetch = FetchConfig { k: c.erasure_k, redundancy: Redundancy::OneExtra };
    let cache = TieredCache::new(L1Cache::new(c.l1_bytes, c.lru_k), cluster, origin, fetch);
    let mut dev = DeviceView::new(opened, CacheFetcher::new(&cache, ZeroLatency));

    let mut records = Vec::new();
    let mut passes = Vec::new();
    for pass in 1..=args.passes.max(1) {
        let mut sum = PassSummary { pass, ..Default::default() };
        let mut lat = Vec::with_capacity(ops.len());
        for op in &ops {
            let before = dev.fetcher().log.len();
            let t = Instant::now();
            match op {
                Op::Read { offset, len } => {
                    dev.read(*offset, *len).with_context(|| format!("read at offset {offset}"))?;
                    sum.reads += 1;
                }
                Op::Write { offset, data } => {
                    dev.write(*offset, data).with_context(|| format!("write at offset {offset}"))?;
                    sum.writes += 1;
                }
            }
            let micros = t.elapsed().as_secs_f64() * 1e6;
            let mut rec = ReadRecord { pass, op: Some(op.clone()), micros, ..Default::default() };
            for f in &dev.fetcher().log[before..] {
                rec.fetches += 1;
                match f.tier {
                    Tier::L1 => rec.l1 += 1,
                    Tier::L2 => rec.l2 += 1,
                    Tier::L3 => rec.l3 += 1,
                }
            }
            sum.bytes += op.len() as u64;
            sum.fetches += rec.fetches;
            sum.l1 += rec.l1;
            sum.l2 += rec.l2;
            sum.l3 += rec.l3;
            lat.push(micros);
            records.push(rec);
        }
        lat.sort_by(f64::total_cmp);
        sum.l1_fraction = (sum.fetches > 0).then(|| sum.l1 as f64 / sum.fetches as f64);
        sum.p50_micros = percentile_sorted(&lat, 0.5).unwrap_or(0.0);
        sum.p99_micros = percentile_sorted(&lat, 0.99).unwrap_or(0.0);
        sum.max_micros = lat.last().copied().unwrap_or(0.0);
        passes.push(sum);
    }
    let fetched = &dev.stats().fetched_chunks;
    let only_touched = fetched.is_subset(&touched);

    let mut human = format!("manifest {id} served from {}{}\n", located.root, if located.migrated { " (migrated)" } else { "" });
    writeln!(human, "{} ops touching {} chunk(s); fetched {} distinct chunk(s)", ops.len(), touched.len(), fetched.len())?;
    for p in &passes {
        writeln!(
            human,
            "pass {}: {} reads, {} writes, {} fetches (L1 {}, L2 {}, origin {}), L1 {}, p50 {:.1}us p99 {:.1}us max {:.1}us",
            p.pass,
            p.reads,
            p.writes,
            p.fetches,
            p.l1,
            p.l2,
            p.l3,
            p.l1_fraction.map_or("n/a".into(), pct),
            p.p50_micros,
            p.p99_micros,
            p.max_micros
        )?;
    }
    if args.per_read {
        for r in &records {
            let (kind, off, len) = match &r.op {
                Some(Op::Read { offset, len }) => ("R", *offset, *len),
                Some(Op::Write { offset, data }) => ("W", *offset, data.len()),
                None => unreachable!(),
            };
            writeln!(human, "{} {kind} {off} {len} {:.1}us L1 {} L2 {} origin {}", r.pass, r.micros, r.l1, r.l2, r.l3)?;
        }
    }
    Ok(Outcome {
        human,
        json: json!({
            "manifest": id,
            "root": located.root,
            "migrated": located.migrated,
            "ops": ops.len(),
            "touched_chunks": touched.len(),
            "fetched_chunks": fetched.len(),
            "fetched_only_touched": only_touched,
            "passes": passes,
            "reads": records,
        }),
    })
}

#[derive(Debug, Clone, clap::Subcommand)]
pub enum GcVerb {
    /// Retire the active root(s) and create fresh ones.
    Rotate,
    /// Copy live manifests out of retired roots (all, or one).
    Migrate {
        #[arg(long)]
        manifest: Option<String>,
    },
    /// Move a fully migrated retired root to expired.
    Expire { root: String },
    /// Remove an expired root's objects.
    Delete { root: String },
    /// Clear the alarm log.
    AckAlarms,
    /// Show roots, states and alarms.
    Status,
    /// Advance the logical clock.
    Tick { ticks: u64 },
    /// Drop a manifest from the live set.
    Release { manifest: String },
}

fn status(store: &Store) -> Result<Outcome> {
    let mut human = format!("clock {}\nlive manifests {}\n", store.origin.now(), store.live.0.len());
    let mut roots = Vec::new();
    for r in store.origin.roots() {
        let manifests = store.origin.list(r.id, ObjectKind::Manifest)?.len();
        let chunks = store.origin.list(r.id, ObjectKind::Chunk)?.len();
        writeln!(
            human,
            "{} {:<8} manifests {manifests:<5} chunks {chunks:<7} created {}{}{}",
            r.id,
            r.state,
            r.created_at,
            r.retired_at.map_or(String::new(), |t| format!(" retired {t}")),
            r.expired_at.map_or(String::new(), |t| format!(" expired {t}")),
        )?;
        roots.push(json!({
            "id": r.id,
            "name": r.id.to_string(),
            "state": r.state,
            "created_at": r.created_at,
            "retired_at": r.retired_at,
            "expired_at": r.expired_at,
            "migration_complete": r.migration_complete,
            "manifests": manifests,
            "chunks": chunks,
        }));
    }
    let alarms = store.origin.alarm_log();
    writeln!(human, "alarms {}", alarms.events.len())?;
    for a in &alarms.events {
        writeln!(human, "  t={} {} {:?} {} {:?}", a.time, a.root, a.kind, a.name, a.cause)?;
    }
    Ok(Outcome {
        human,
        json: json!({ "clock": store.origin.now(), "live": store.live.0.len(), "roots": roots, "alarms": alarms.events }),
    })
}

pub fn gc(dir: &Path, cfg: StoreConfig, verb: &GcVerb) -> Result<Outcome> {
    let mut store = Store::open(dir, cfg, false)?;
    let out = match verb {
        GcVerb::Status => return status(&store),
        GcVerb::Rotate => {
            let retired = store.gc.active_roots();
            let fresh = store.gc.rotate_root()?;
            Outcome {
                human: format!("retired {}\nactive {}\n", join(&retired), join(&fresh)),
                json: json!({ "retired": retired, "active": fresh }),
            }
        }
        GcVerb::Migrate { manifest: None } => {
            let rep = store.gc.sweep(&store.live)?;
            let mut human = String::new();
            for (root, m) in &rep.migrated {
                writeln!(human, "migrated {m} out of {root}")?;
            }
            writeln!(human, "{} manifest(s) migrated; complete: {}", rep.migrated.len(), join(&rep.completed_roots))?;
            Outcome { human, json: serde_json::to_value(&rep)? }
        }
        GcVerb::Migrate { manifest: Some(m) } => {
            let id = parse_manifest_id(m)?;
            let from = store
                .origin
                .roots()
                .into_iter()
                .filter(|r| r.state == RootState::Retired)
                .map(|r| r.id)
                .find(|&r| store.origin.contains(r, ObjectKind::Manifest, &id).unwrap_or(false))
                .ok_or_else(|| Invalid(format!("manifest {id} is not in any retired root")))?;
            let to = store.gc.assign_root(&id.0)?;
            store.gc.migrate_manifest(&id, from, to)?;
            Outcome { human: format!("migrated {id} from {from} to {to}\n"), json: json!({ "manifest": id, "from": from, "to": to }) }
        }
        GcVerb::Expire { root } => {
            let root = parse_root(root)?;
            store.gc.expire_root(root, &store.live)?;
            Outcome { human: format!("expired {root}\n"), json: json!({ "expired": root }) }
        }
        GcVerb::Delete { root } => {
            let root = parse_root(root)?;
            let removed = store.gc.delete_root(root)?;
            Outcome { human: format!("deleted {root} ({removed} objects)\n"), json: json!({ "deleted": root, "objects": removed }) }
        }
        GcVerb::AckAlarms => {
            let n = store.origin.acknowledge_alarms();
            Outcome { human: format!("acknowledged {n} alarm(s)\n"), json: json!({ "acknowledged": n }) }
        }
        GcVerb::Tick { ticks } => {
            let now = store.origin.advance_clock(*ticks);
            Outcome { human: format!("clock {now}\n"), json: json!({ "clock": now }) }
        }
        GcVerb::Release { manifest } => {
            let id = parse_manifest_id(manifest)?;
            let was_live = store.live.0.remove(&id);
            Outcome { human: format!("released {id}{}\n", if was_live { "" } else { " (was not live)" }), json: json!({ "released": id, "was_live": was_live }) }
        }
    };
    store.save()?;
    Ok(out)
}

fn join(roots: &[RootId]) -> String {
    if roots.is_empty() {
        return "-".into();
    }
    roots.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = SimConfig::from_toml(&text).with_context(|| format!("in {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().with_context(|| format!("in {}", config.display()))?;
    let hash = cfg.hash();
    let report = run_mode(&cfg)?;
    let files = report.write_files(out)?;
    let mut human = format!("sim config {hash}\n");
    match &report {
        ModeReport::Run(m) => {
            let s = &m.summary;
            writeln!(
                human,
                "starts {} admitted, {} rejected; L2 hit rate {}; start p50 {:.4}s p99.9 {:.4}s",
                s.starts_admitted,
                s.starts_rejected,
                s.l2_hit_rate.map_or("n/a".into(), pct),
                s.start_latency.p50,
                s.start_latency.p999
            )?;
        }
        ModeReport::ColdStart(d) => {
            writeln!(
                human,
                "pre-flush L2 hit rate {}; recovery {} bucket(s); max backlog {} (post-flush {}); rejected {}",
                pct(d.pre_flush_l2_hit_rate),
                d.recovery_buckets.map_or("never".into(), |b| b.to_string()),
                d.max_backlog,
                d.post_flush_max_backlog,
                d.rejected_total
            )?;
        }
        ModeReport::Scan(s) => {
            for p in &s.policies {
                writeln!(
                    human,
                    "LRU-{}: baseline hot hit rate {}, min {}, dip {}, hot evictions {}",
                    p.lru_k,
                    pct(p.baseline_hot_hit_rate),
                    pct(p.min_hot_hit_rate),
                    pct(p.dip),
                    p.hot_evictions_after_burst
                )?;
            }
        }
        ModeReport::Tail(t) => {
            for (name, s) in [("4-of-4", &t.exact), ("4-of-5", &t.one_extra)] {
                writeln!(
                    human,
                    "{name}: start p99.9 {:.4}s; starts with a tail chunk {}; starts touching a slow node {}",
                    s.start_latency.p999,
                    pct(s.tail_start_fraction),
                    pct(s.slow_touch_fraction)
                )?;
            }
        }
    }
    for f in &files {
        writeln!(human, "wrote {}", f.display())?;
    }
    Ok(Outcome { human, json: json!({ "config_hash": hash, "files": files, "report": report }) })
}

pub fn stats(dir: &Path, cfg: StoreConfig) -> Result<Outcome> {
    let store = Store::open(dir, cfg, true)?;
    let roots = store.origin.roots();
    let mut names = Vec::with_capacity(store.uploads.len());
    for rec in &store.uploads {
        // Any surviving copy will do; read through the backend so expired
        // roots do not raise alarms.
        let bytes = std::iter::once(rec.root)
            .chain(roots.iter().map(|r| r.id))
            .find_map(|r| store.origin.backend().get(r, ObjectKind::Manifest, &rec.manifest).ok().flatten());
        match bytes {
            Some(b) => names.push(list_chunk_names(&b).with_context(|| format!("manifest {}", rec.manifest))?),
            None => names.push(Vec::new()),
        }
    }
    let dedup = dedup_stats(&names);
    let mut per_state: BTreeMap<String, usize> = BTreeMap::new();
    let mut chunk_objects = 0;
    for r in &roots {
        *per_state.entry(r.state.to_string()).or_default() += 1;
        chunk_objects += store.origin.list(r.id, ObjectKind::Chunk)?.len();
    }
    let mut human = format!("uploads {}\nroots {per_state:?}\nchunk objects {chunk_objects}\n", store.uploads.len());
    writeln!(human, "uploads with no unique chunk {}", pct(dedup.fraction_zero_unique))?;
    if let (Some(mean), Some(median)) = (dedup.mean_unique_nontrivial, dedup.median_unique_nontrivial) {
        writeln!(human, "unique fraction among the rest: mean {} median {}", pct(mean), pct(median))?;
    }
    Ok(Outcome {
        human,
        json: json!({ "uploads": store.uploads, "roots": per_state, "chunk_objects": chunk_objects, "dedup": dedup }),
    })
}

/// Hex-encoded random key, for operators writing keyfiles by hand.
pub fn keygen(seed: Option<u64>) -> Outcome {
    let mut key = [0u8; 32];
    rng(seed).fill_bytes(&mut key);
    let hex = hex::encode(key);
    Outcome { human: format!("{hex}\n"), json: json!({ "key": hex }) }
}

pub fn missing_store() -> anyhow::Error {
    anyhow!(Invalid("this command needs --store <dir>".into()))
}
