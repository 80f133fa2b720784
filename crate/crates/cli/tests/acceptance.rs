//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Read};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lazyblock_core::blockdev::DeviceView;
use lazyblock_core::cache::{
    FetchConfig, L1Cache, L2Client, L2Cluster, LruK, Redundancy, StoreOrigin, TieredCache, ZeroLatency,
    DEFAULT_VNODES,
};
use lazyblock_core::crypto::{
    decrypt_chunk, list_chunk_names, open_manifest, ChunkHash, CustomerKey, ManifestEntry, OpenedManifest, Salt,
    SealedManifest,
};
use lazyblock_core::erasure;
use lazyblock_core::flattener::{ChunkReader, DEFAULT_CHUNK_SIZE, PAGE_SIZE};
use lazyblock_core::gc::{Gc, GcConfig, GcError, LiveSet};
use lazyblock_core::origin::{ObjectKind, OriginError, OriginStore, RootId, RootState};
use lazyblock_core::upload::{upload_image, ManifestBuilder, SaltPolicy};
use lazyblock_sim::{cold_start_drill, scan_resistance_experiment, tail_latency_experiment, SimConfig};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn customer() -> CustomerKey {
    CustomerKey { key_id: "acceptance".into(), key: [0x42; 32] }
}

fn sim_config(name: &str) -> SimConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../sim/configs").join(name);
    SimConfig::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

/// Synthetic image source: every chunk is filler with its index in front, so
/// no two chunks are equal and none is all zero.
struct Synthetic {
    len: u64,
    pos: u64,
    chunk: u64,
}

impl Read for Synthetic {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = buf.len().min((self.len - self.pos) as usize);
        buf[..n].fill(0x5a);
        // Chunk heads carry the chunk index, little-endian.
        let mut i = 0;
        while i < n {
            let p = self.pos + i as u64;
            let within = p % self.chunk;
            if within < 8 {
                buf[i] = ((p / self.chunk) >> (8 * within)) as u8;
                i += 1;
            } else {
                i += (self.chunk - within) as usize;
            }
        }
        self.pos += n as u64;
        Ok(n)
    }
}

fn streamed_manifest(len: u64) -> Result<(usize, usize, Duration), String> {
    let t = Instant::now();
    let mut b = ManifestBuilder::new(Salt::empty(), DEFAULT_CHUNK_SIZE).map_err(|e| e.to_string())?;
    let src = Synthetic { len, pos: 0, chunk: DEFAULT_CHUNK_SIZE as u64 };
    for chunk in ChunkReader::new(src, DEFAULT_CHUNK_SIZE).map_err(|e| e.to_string())? {
        let chunk = chunk.map_err(|e| e.to_string())?;
        b.push(chunk.plaintext.as_deref()).map_err(|e| e.to_string())?;
    }
    b.set_image_length(len);
    let records = b.chunk_count();
    let sealed = b.finish(&customer(), &mut ChaCha20Rng::seed_from_u64(1)).map_err(|e| e.to_string())?;
    Ok((records, sealed.to_bytes().len(), t.elapsed()))
}

fn c1_manifest_overhead() -> Outcome {
    let (r1, s1, _) = streamed_manifest(1 << 30)?;
    let o1 = s1 as f64 / (1u64 << 30) as f64;
    ensure!(r1 == 2048, "1 GiB: {r1} records");
    ensure!(o1 <= 0.0003, "1 GiB overhead {:.4}%", 100.0 * o1);
    let (r16, s16, t16) = streamed_manifest(16 << 30)?;
    let o16 = s16 as f64 / (16u64 << 30) as f64;
    ensure!(r16 == 32768, "16 GiB: {r16} records");
    ensure!(s16 < 3 << 20, "16 GiB manifest is {s16} bytes");
    ensure!(o16 <= 0.0002, "16 GiB overhead {:.4}%", 100.0 * o16);
    ensure!(t16 <= Duration::from_secs(120), "16 GiB took {t16:?}");
    Ok(format!(
        "16 GiB: {r16} records, {s16} bytes ({:.4}%), {:.1}s; 1 GiB: {s1} bytes ({:.4}%)",
        100.0 * o16,
        t16.as_secs_f64(),
        100.0 * o1
    ))
}

fn fixture_image(chunks: usize, cs: usize, tweak: &[usize]) -> Vec<u8> {
    let mut v = vec![0u8; chunks * cs];
    for i in 0..chunks {
        let tag = if tweak.contains(&i) { 0xA5_0000 + i } else { i + 1 };
        v[i * cs..i * cs + 8].copy_from_slice(&(tag as u64).to_le_bytes());
    }
    v
}

fn c2_dedup() -> Outcome {
    let cs = DEFAULT_CHUNK_SIZE;
    let store = Arc::new(OriginStore::in_memory());
    let gc = Gc::new(store.clone(), GcConfig::default()).map_err(|e| e.to_string())?;
    gc.bootstrap();
    let policy = SaltPolicy::PerRoot;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let base = fixture_image(100, cs, &[]);
    let derived = fixture_image(100, cs, &[3, 17, 42, 77, 99]);
    let up = |img: &[u8], rng: &mut ChaCha20Rng| {
        let root = gc.assign_root(b"fixture").unwrap();
        upload_image(&store, root, img, cs, policy.salt_for(root), &customer(), rng).unwrap()
    };
    let b = up(&base, &mut rng);
    ensure!(b.new_chunks == 100, "base stored {} chunks", b.new_chunks);
    let d = up(&derived, &mut rng);
    ensure!(d.new_chunks == 5 && d.data_chunks == 100, "derived: {} of {} unique", d.new_chunks, d.data_chunks);
    let again = up(&derived, &mut rng);
    ensure!(again.new_chunks == 0, "re-upload: {} unique", again.new_chunks);
    gc.rotate_root().map_err(|e| e.to_string())?;
    let fresh = up(&derived, &mut rng);
    ensure!(fresh.new_chunks == 100 && fresh.unique_fraction == 1.0, "after rotation: {} unique", fresh.new_chunks);
    Ok(format!(
        "derived {}/100 unique, re-upload {}/100, after rotation {}/100",
        d.new_chunks, again.new_chunks, fresh.new_chunks
    ))
}

fn c3_erasure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut chunk = vec![0u8; DEFAULT_CHUNK_SIZE];
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..100 {
        rng.fill_bytes(&mut chunk);
        let set = erasure::encode(&chunk, 4).map_err(|e| e.to_string())?;
        ensure!(set.stripes.len() == 5, "{} stripes", set.stripes.len());
        ensure!(set.total_bytes() * 4 == chunk.len() * 5, "stored {} bytes for {}", set.total_bytes(), chunk.len());
        for lost in 0..5 {
            let rest: Vec<_> = set.stripes.iter().filter(|s| s.index as usize != lost).cloned().collect();
            let back = erasure::reconstruct(&rest, 4).map_err(|e| e.to_string())?;
            checked += 1;
            if back != chunk {
                mismatches += 1;
            }
        }
    }
    ensure!(mismatches == 0, "{mismatches} of {checked} reconstructions differ");
    Ok(format!("{checked} reconstructions, 0 mismatches, overhead 25%"))
}

fn c4_tail() -> Outcome {
    let cfg = sim_config("tail.toml");
    let t = Instant::now();
    let r = tail_latency_experiment(&cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let (exact, extra) = (&r.exact, &r.one_extra);
    ensure!(exact.starts_admitted == extra.starts_admitted, "policies saw different arrivals");
    ensure!(
        extra.start_latency.p999 < exact.start_latency.p999,
        "p99.9 4-of-5 {:.4}s vs 4-of-4 {:.4}s",
        extra.start_latency.p999,
        exact.start_latency.p999
    );
    let nodes = cfg.topology.l2_nodes as f64;
    let slow = cfg.latency.slow_nodes.len() as f64;
    let analytic = 1.0 - (1.0 - slow / nodes).powf(exact.mean_l2_requests_per_start);
    ensure!(
        (exact.slow_touch_fraction - analytic).abs() <= 0.03,
        "slow-node touch {:.4} vs analytic {analytic:.4}",
        exact.slow_touch_fraction
    );
    let iid = r.iid.as_ref().ok_or("no iid run")?;
    let expected = 1.0 - 0.999f64.powi(cfg.workload.touched_chunks as i32);
    ensure!((iid.tail_start_fraction - 0.63).abs() <= 0.03, "tail-start fraction {:.4}", iid.tail_start_fraction);
    ensure!(elapsed <= Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "p99.9 {:.1}ms (4-of-5) < {:.1}ms (4-of-4); slow touch {:.4} vs {analytic:.4}; tail starts {:.3} (1-0.999^{} = {expected:.3}); {:.1}s",
        1e3 * extra.start_latency.p999,
        1e3 * exact.start_latency.p999,
        exact.slow_touch_fraction,
        iid.tail_start_fraction,
        cfg.workload.touched_chunks,
        elapsed.as_secs_f64()
    ))
}

/// Replays single-access scan items through an LRU-k sized above the hot set
/// and counts hot entries evicted.
fn hot_evictions(k: usize) -> usize {
    let hot: Vec<u64> = (0..500).collect();
    let mut c: LruK<u64, ()> = LruK::new(k, 600);
    let access = |c: &mut LruK<u64, ()>, key: u64| -> Vec<u64> {
        if c.get(&key).is_some() {
            return Vec::new();
        }
        c.insert(key, (), 1).unwrap().into_iter().map(|(k, _)| k).collect()
    };
    for _ in 0..2 {
        for &h in &hot {
            access(&mut c, h);
        }
    }
    let mut evicted = 0;
    for i in 0..100_000u64 {
        let out = access(&mut c, 1_000_000 + i);
        evicted += out.iter().filter(|k| **k < 500).count();
        if i % 10 == 0 {
            let h = hot[(i / 10) as usize % hot.len()];
            evicted += access(&mut c, h).iter().filter(|k| **k < 500).count();
        }
    }
    evicted
}

fn c5_scan() -> Outcome {
    let r = scan_resistance_experiment(&sim_config("scan.toml")).map_err(|e| e.to_string())?;
    let (one, two) = (r.policy(1).ok_or("no LRU-1 run")?, r.policy(2).ok_or("no LRU-2 run")?);
    ensure!(two.dip < one.dip, "dip LRU-2 {:.4} vs LRU-1 {:.4}", two.dip, one.dip);
    ensure!(two.hot_evictions_after_burst == 0, "LRU-2 evicted {} hot stripes", two.hot_evictions_after_burst);
    let (e1, e2) = (hot_evictions(1), hot_evictions(2));
    ensure!(e2 == 0, "trace: LRU-2 evicted {e2} hot entries");
    Ok(format!(
        "hot-set dip {:.3} (LRU-1) vs {:.3} (LRU-2); hot evictions {} vs {}; trace {e1} vs {e2}",
        one.dip, two.dip, one.hot_evictions_after_burst, two.hot_evictions_after_burst
    ))
}

struct GcOracle {
    live: LiveSet,
    released: Vec<ChunkHash>,
    contents: HashMap<ChunkHash, Vec<u8>>,
    alarm_expected: bool,
}

/// Reads a manifest and every chunk it names. `Ok(None)` means not found.
fn gc_read(gc: &Gc, m: &ChunkHash, refs: &LiveSet, alarm: &mut bool) -> Result<Option<Vec<u8>>, String> {
    let loc = match gc.read_manifest(m, refs) {
        Ok(l) => l,
        Err(GcError::ManifestNotFound(_)) => return Ok(None),
        Err(e) => return Err(e.to_string()),
    };
    let store = gc.store();
    if store.root(loc.root).map(|r| r.state) == Some(RootState::Expired) {
        *alarm = true;
    }
    let sealed = SealedManifest::from_bytes(&loc.bytes).map_err(|e| e.to_string())?;
    let opened = open_manifest(&sealed, &customer()).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for i in 0..opened.chunk_count() {
        let e = opened.entry(i);
        if e.is_zero {
            out.extend(vec![0u8; opened.chunk_size()]);
            continue;
        }
        let ct = match store.get(loc.root, ObjectKind::Chunk, &e.hash) {
            Ok(ct) => ct,
            Err(OriginError::NotFound { .. }) => return Ok(None),
            Err(err) => return Err(err.to_string()),
        };
        out.extend(decrypt_chunk(&ct, &e.key.unwrap(), &e.hash, i as u64).map_err(|e| e.to_string())?);
    }
    Ok(Some(out))
}

/// Independent closure scan over the backend: every manifest's chunks are in its root.
fn closure_holds(store: &OriginStore) -> Result<bool, String> {
    for r in store.roots().into_iter().filter(|r| r.state != RootState::Deleted) {
        let chunks: BTreeSet<ChunkHash> = store.list(r.id, ObjectKind::Chunk).map_err(|e| e.to_string())?.into_iter().collect();
        for m in store.list(r.id, ObjectKind::Manifest).map_err(|e| e.to_string())? {
            let bytes = store.backend().get(r.id, ObjectKind::Manifest, &m).map_err(|e| e.to_string())?.ok_or("listed manifest vanished")?;
            let names = list_chunk_names(&bytes).map_err(|e| e.to_string())?;
            if !names.iter().all(|n| chunks.contains(n)) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn c6_gc() -> Outcome {
    const STEPS: usize = 100_000;
    const CS: usize = 4096;
    let store = Arc::new(OriginStore::in_memory());
    let cfg = GcConfig { active_roots: 2, quiet_period: 5, rotation_period: 50 };
    let gc = Gc::new(store.clone(), cfg).map_err(|e| e.to_string())?;
    gc.bootstrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut seal_rng = ChaCha20Rng::seed_from_u64(6);
    let pool: Vec<Vec<u8>> = (0..48u64)
        .map(|i| {
            let mut c = vec![(i as u8) | 1; CS];
            c[..8].copy_from_slice(&i.to_le_bytes());
            c
        })
        .collect();
    let mut o = GcOracle { live: LiveSet::default(), released: Vec::new(), contents: HashMap::new(), alarm_expected: false };
    let (mut live_reads, mut live_missing, mut wrong_bytes) = (0u64, 0u64, 0u64);
    let (mut closure_checks, mut closure_failures) = (0u64, 0u64);
    let (mut blocked_attempts, mut blocked_refused) = (0u64, 0u64);
    let (mut deletes, mut expire_mismatch) = (0u64, 0u64);

    for step in 0..STEPS {
        let roll = rng.random_range(0..100);
        match roll {
            0..15 => {
                let mut img = Vec::new();
                for _ in 0..rng.random_range(1..6) {
                    if rng.random_bool(0.1) {
                        img.extend(vec![0u8; CS]);
                    } else {
                        img.extend_from_slice(&pool[rng.random_range(0..pool.len())]);
                    }
                }
                // A unique tail keeps manifest ids distinct.
                img.extend_from_slice(&(step as u64).to_le_bytes());
                let root = gc.assign_root(&(step as u64).to_le_bytes()).map_err(|e| e.to_string())?;
                let rep = upload_image(&store, root, &img, CS, SaltPolicy::PerRoot.salt_for(root), &customer(), &mut seal_rng)
                    .map_err(|e| e.to_string())?;
                o.live.0.insert(rep.manifest_id);
                img.resize(img.len().div_ceil(CS) * CS, 0);
                o.contents.insert(rep.manifest_id, img);
            }
            15..50 if !o.live.0.is_empty() => {
                let m = *o.live.0.iter().nth(rng.random_range(0..o.live.0.len())).unwrap();
                live_reads += 1;
                match gc_read(&gc, &m, &o.live, &mut o.alarm_expected)? {
                    None => live_missing += 1,
                    Some(bytes) if bytes != o.contents[&m] => wrong_bytes += 1,
                    Some(_) => {}
                }
            }
            50..55 if !o.released.is_empty() => {
                let m = o.released[rng.random_range(0..o.released.len())];
                if let Some(bytes) = gc_read(&gc, &m, &o.live, &mut o.alarm_expected)? {
                    if bytes != o.contents[&m] {
                        wrong_bytes += 1;
                    }
                }
            }
            55..70 if !o.live.0.is_empty() => {
                let m = *o.live.0.iter().nth(rng.random_range(0..o.live.0.len())).unwrap();
                o.live.0.remove(&m);
                o.released.push(m);
            }
            70..72 => {
                gc.rotate_root().map_err(|e| e.to_string())?;
            }
            72..77 => {
                gc.sweep(&o.live).map_err(|e| e.to_string())?;
            }
            77..85 => {
                let retired: Vec<RootId> = store.roots().iter().filter(|r| r.state == RootState::Retired).map(|r| r.id).collect();
                if let Some(&r) = retired.get(rng.random_range(0..retired.len().max(1))) {
                    let active: Vec<RootId> = gc.active_roots();
                    let pending = store.list(r, ObjectKind::Manifest).map_err(|e| e.to_string())?.into_iter().any(|m| {
                        o.live.0.contains(&m) && !active.iter().any(|&a| store.contains(a, ObjectKind::Manifest, &m).unwrap())
                    });
                    match gc.expire_root(r, &o.live) {
                        Ok(()) if pending => expire_mismatch += 1,
                        Err(GcError::LiveManifests { .. }) if !pending => expire_mismatch += 1,
                        Ok(()) | Err(GcError::LiveManifests { .. }) => {}
                        Err(e) => return Err(e.to_string()),
                    }
                }
            }
            85..93 => {
                let expired: Vec<_> = store.roots().into_iter().filter(|r| r.state == RootState::Expired).collect();
                if let Some(r) = expired.get(rng.random_range(0..expired.len().max(1))) {
                    let quiet = store.now() - r.expired_at.unwrap() >= cfg.quiet_period;
                    if o.alarm_expected {
                        blocked_attempts += 1;
                    }
                    match gc.delete_root(r.id) {
                        Ok(_) => {
                            ensure!(!o.alarm_expected, "step {step}: deletion of {} with a pending expired read", r.id);
                            ensure!(quiet, "step {step}: deletion of {} inside the quiet period", r.id);
                            deletes += 1;
                        }
                        Err(GcError::AlarmsPending(_)) => blocked_refused += 1,
                        Err(GcError::QuietPeriod { .. }) if !quiet => {}
                        Err(e) => return Err(format!("step {step}: {e}")),
                    }
                }
            }
            93..98 => {
                store.advance_clock(rng.random_range(1..4));
            }
            98..100 => {
                store.acknowledge_alarms();
                o.alarm_expected = false;
            }
            _ => {}
        }
        ensure!(
            store.deletions_blocked() == o.alarm_expected,
            "step {step}: store alarm state {} but oracle expects {}",
            store.deletions_blocked(),
            o.alarm_expected
        );
        if step % 500 == 499 {
            closure_checks += 1;
            let violations = gc.check_closure().map_err(|e| e.to_string())?;
            if !violations.is_empty() || !closure_holds(&store)? {
                closure_failures += 1;
            }
        }
    }
    ensure!(live_missing == 0, "{live_missing} of {live_reads} live reads were not found");
    ensure!(wrong_bytes == 0, "{wrong_bytes} reads returned wrong bytes");
    ensure!(closure_failures == 0, "{closure_failures} of {closure_checks} closure checks failed");
    ensure!(blocked_refused == blocked_attempts, "{blocked_refused} of {blocked_attempts} blocked deletions refused");
    ensure!(expire_mismatch == 0, "{expire_mismatch} expire outcomes disagree with the oracle");
    ensure!(blocked_attempts > 0 && deletes > 0, "drill too weak: {blocked_attempts} blocked attempts, {deletes} deletes");
    Ok(format!(
        "{STEPS} steps: {live_reads} live reads all served; {closure_checks} closure checks clean; {blocked_refused}/{blocked_attempts} alarm-blocked deletions refused; {deletes} roots deleted"
    ))
}

struct CowBase {
    manifest: OpenedManifest,
    chunks: Arc<HashMap<ChunkHash, Arc<[u8]>>>,
    image: Vec<u8>,
}

fn cow_base(seed: u64) -> Result<CowBase, String> {
    const CS: usize = 4 * PAGE_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunks = 48;
    let mut image = vec![0u8; chunks * CS + 1234];
    for c in 0..chunks {
        if c % 4 != 3 {
            rng.fill_bytes(&mut image[c * CS..(c + 1) * CS]);
        }
    }
    rng.fill_bytes(&mut image[chunks * CS..]);
    let store = OriginStore::in_memory();
    let root = store.create_root();
    let rep = upload_image(&store, root, &image, CS, Salt::empty(), &customer(), &mut ChaCha20Rng::seed_from_u64(seed))
        .map_err(|e| e.to_string())?;
    let bytes = store.get(root, ObjectKind::Manifest, &rep.manifest_id).map_err(|e| e.to_string())?;
    let manifest = open_manifest(&SealedManifest::from_bytes(&bytes).unwrap(), &customer()).map_err(|e| e.to_string())?;
    let map = rep.chunk_names.iter().map(|n| (*n, store.get(root, ObjectKind::Chunk, n).unwrap())).collect();
    Ok(CowBase { manifest, chunks: Arc::new(map), image })
}

fn c7_cow() -> Outcome {
    let ps = PAGE_SIZE as u64;
    let (mut ops, mut mismatches, mut rmw_checked) = (0u64, 0u64, 0u64);
    for seed in 0..10 {
        let base = cow_base(seed)?;
        let chunks = base.chunks.clone();
        let fetch = move |i: u64, e: &ManifestEntry| {
            let ct = &chunks[&e.hash];
            Ok(Arc::from(decrypt_chunk(ct, &e.key.unwrap(), &e.hash, i).expect("base chunk decrypts")))
        };
        let mut dev = DeviceView::new(base.manifest.clone(), fetch);
        let mut oracle = base.image.clone();
        let mut dirty = BTreeSet::new();
        let len = oracle.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for _ in 0..10_000 {
            let off = rng.random_range(0..len);
            let n = rng.random_range(1..=3 * PAGE_SIZE as u64).min(len - off) as usize;
            ops += 1;
            if rng.random_bool(0.5) {
                let got = dev.read(off, n).map_err(|e| e.to_string())?;
                if got[..] != oracle[off as usize..off as usize + n] {
                    mismatches += 1;
                }
            } else {
                let mut data = vec![0u8; n];
                rng.fill_bytes(&mut data);
                // Pages the write covers only partly and that are still clean
                // must be read from the base first.
                let end = off + n as u64;
                let expected_rmw = (off / ps..=(end - 1) / ps)
                    .filter(|&p| {
                        let covered = end.min((p + 1) * ps) - off.max(p * ps);
                        covered < ps && !dirty.contains(&p)
                    })
                    .count() as u64;
                let before = dev.stats().rmw_pages;
                dev.write(off, &data).map_err(|e| e.to_string())?;
                ensure!(dev.stats().rmw_pages - before == expected_rmw, "seed {seed}: rmw {} vs {expected_rmw}", dev.stats().rmw_pages - before);
                rmw_checked += expected_rmw;
                dirty.extend(off / ps..=(end - 1) / ps);
                oracle[off as usize..end as usize].copy_from_slice(&data);
            }
        }
        let all = dev.read(0, len as usize).map_err(|e| e.to_string())?;
        if all != oracle {
            mismatches += 1;
        }
        // The shared base is untouched.
        let chunks = base.chunks.clone();
        let mut fresh = DeviceView::new(base.manifest.clone(), move |i: u64, e: &ManifestEntry| {
            Ok(Arc::from(decrypt_chunk(&chunks[&e.hash], &e.key.unwrap(), &e.hash, i).unwrap()))
        });
        if fresh.read(0, len as usize).map_err(|e| e.to_string())? != base.image {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches over {ops} ops");
    Ok(format!("{ops} ops over 10 seeds, 0 mismatches; {rmw_checked} read-modify-write pages matched"))
}

struct IntegrityFixture {
    store: Arc<OriginStore>,
    root: RootId,
    sealed: Vec<u8>,
    entries: Vec<(ManifestEntry, Vec<u8>)>,
}

fn integrity_fixture() -> Result<IntegrityFixture, String> {
    const CS: usize = 4 * PAGE_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut image = vec![0u8; 8 * CS];
    rng.fill_bytes(&mut image);
    let store = Arc::new(OriginStore::in_memory());
    let root = store.create_root();
    let rep = upload_image(&store, root, &image, CS, Salt::empty(), &customer(), &mut ChaCha20Rng::seed_from_u64(8))
        .map_err(|e| e.to_string())?;
    let sealed = store.get(root, ObjectKind::Manifest, &rep.manifest_id).map_err(|e| e.to_string())?.to_vec();
    let opened = open_manifest(&SealedManifest::from_bytes(&sealed).unwrap(), &customer()).map_err(|e| e.to_string())?;
    let entries = (0..opened.chunk_count()).map(|i| (opened.entry(i), image[i * CS..(i + 1) * CS].to_vec())).collect();
    Ok(IntegrityFixture { store, root, sealed, entries })
}

fn worker(f: &IntegrityFixture, cluster: &Arc<L2Cluster>) -> TieredCache {
    let origin = Arc::new(StoreOrigin { store: f.store.clone(), root: f.root });
    let cfg = FetchConfig { k: 4, redundancy: Redundancy::OneExtra };
    TieredCache::new(L1Cache::new(1 << 20, 2), cluster.clone(), origin, cfg)
}

fn c8_integrity() -> Outcome {
    let f = integrity_fixture()?;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let (mut detected, mut masked, mut leaked) = (0u64, 0u64, 0u64);
    for trial in 0..1000 {
        let idx = rng.random_range(0..f.entries.len());
        let (entry, plain) = &f.entries[idx];
        let check = |r: Result<lazyblock_core::cache::FetchResult, _>, d: &mut u64, m: &mut u64, l: &mut u64| match r {
            Err(_) => *d += 1,
            Ok(r) if &r.plaintext[..] == &plain[..] => *m += 1,
            Ok(_) => *l += 1,
        };
        match trial % 3 {
            0 => {
                // Origin ciphertext; with a warm L2 on odd trials.
                let cluster = Arc::new(L2Cluster::new(5, 1 << 22, 2, DEFAULT_VNODES));
                if trial % 2 == 1 {
                    worker(&f, &cluster).fetch_chunk(idx as u64, entry, &mut ZeroLatency).map_err(|e| e.to_string())?;
                }
                let good = f.store.get(f.root, ObjectKind::Chunk, &entry.hash).unwrap();
                let mut bad = good.to_vec();
                let bit = rng.random_range(0..bad.len() * 8);
                bad[bit / 8] ^= 1 << (bit % 8);
                f.store.backend().tamper(f.root, ObjectKind::Chunk, &entry.hash, &bad).unwrap();
                let r = worker(&f, &cluster).fetch_chunk(idx as u64, entry, &mut ZeroLatency);
                check(r, &mut detected, &mut masked, &mut leaked);
                f.store.backend().tamper(f.root, ObjectKind::Chunk, &entry.hash, &good).unwrap();
            }
            1 => {
                let cluster = Arc::new(L2Cluster::new(5, 1 << 22, 2, DEFAULT_VNODES));
                worker(&f, &cluster).fetch_chunk(idx as u64, entry, &mut ZeroLatency).map_err(|e| e.to_string())?;
                let stripe = rng.random_range(0..5u8);
                let node = cluster.place(&entry.hash, 5).unwrap()[stripe as usize];
                let len = plain.len() / 4;
                let bit = rng.random_range(0..len * 8);
                ensure!(cluster.node(node).unwrap().lock().corrupt(&entry.hash, stripe, bit), "stripe {stripe} not cached");
                let r = worker(&f, &cluster).fetch_chunk(idx as u64, entry, &mut ZeroLatency);
                check(r, &mut detected, &mut masked, &mut leaked);
            }
            _ => {
                let mut bad = f.sealed.clone();
                let bit = rng.random_range(0..bad.len() * 8);
                bad[bit / 8] ^= 1 << (bit % 8);
                let id_ok = ChunkHash::of(&bad) == ChunkHash::of(&f.sealed);
                match SealedManifest::from_bytes(&bad).and_then(|s| open_manifest(&s, &customer())) {
                    Err(_) => detected += 1,
                    Ok(m) => {
                        let same = (0..m.chunk_count()).all(|i| m.entry(i) == f.entries[i].0);
                        if same && m.chunk_count() == f.entries.len() {
                            masked += 1;
                        } else if !id_ok {
                            // The id no longer matches the content address.
                            detected += 1;
                        } else {
                            leaked += 1;
                        }
                    }
                }
            }
        }
    }
    ensure!(leaked == 0, "{leaked} corruptions reached a reader");
    Ok(format!("1000 bit flips: {detected} detected, {masked} masked, 0 returned corrupt bytes"))
}

fn c9_drill() -> Outcome {
    let cfg = sim_config("cold_start.toml");
    let limit = cfg.limiter.max_in_flight.ok_or("bundled drill has no limiter")?;
    let limited = cold_start_drill(&cfg).map_err(|e| e.to_string())?;
    ensure!(limited.post_flush_max_backlog <= limit, "backlog {} over limit {limit}", limited.post_flush_max_backlog);
    let rec = limited.recovery_buckets.ok_or("L2 hit rate never recovered")?;
    let mut open = cfg.clone();
    open.limiter.max_in_flight = None;
    ensure!(open.feedback.enabled, "feedback disabled in the bundled drill");
    let unlimited = cold_start_drill(&open).map_err(|e| e.to_string())?;
    ensure!(
        unlimited.post_flush_max_backlog > limited.post_flush_max_backlog,
        "unlimited peak {} vs limited {}",
        unlimited.post_flush_max_backlog,
        limited.post_flush_max_backlog
    );
    Ok(format!(
        "limited: peak {} <= {limit}, recovered to 90% of {:.3} in {rec} bucket(s), {} rejected; unlimited peak {}",
        limited.post_flush_max_backlog, limited.pre_flush_l2_hit_rate, limited.rejected_during_recovery, unlimited.post_flush_max_backlog
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("manifest overhead", c1_manifest_overhead),
        ("convergent dedup", c2_dedup),
        ("erasure codec", c3_erasure),
        ("tail latency", c4_tail),
        ("scan resistance", c5_scan),
        ("gc safety", c6_gc),
        ("cow oracle", c7_cow),
        ("integrity", c8_integrity),
        ("cold-start drill", c9_drill),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
