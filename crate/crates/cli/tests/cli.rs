use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lazyblock_core::origin::ObjectKind;
use lazyblock_sim::SimConfig;
use serde_json::Value;
use tempfile::TempDir;

const CS: usize = 4096;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Env { dir: tempfile::tempdir().unwrap() };
        fs::write(env.path("cfg.toml"), format!("chunk_size = {CS}\nl1_bytes = 1048576\nl2_node_bytes = 4194304\n[gc]\nactive_roots = 1\nquiet_period = 10\nrotation_period = 10\n")).unwrap();
        let out = env.run(&["--config", "cfg.toml", "--store", "st", "--seed", "1", "init"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        env
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lazyblock")).current_dir(self.dir.path()).args(args).output().unwrap()
    }

    /// Runs against the store with `--json` and returns the parsed result.
    fn json(&self, args: &[&str]) -> (i32, Value) {
        let mut full = vec!["--store", "st", "--json"];
        full.extend_from_slice(args);
        let out = self.run(&full);
        let v = serde_json::from_slice(&out.stdout).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)));
        (out.status.code().unwrap(), v)
    }

    fn ok(&self, args: &[&str]) -> Value {
        let (code, v) = self.json(args);
        assert_eq!(code, 0, "{args:?}: {v}");
        v
    }

    fn write_image(&self, name: &str, chunks: usize, tweak: &[usize]) -> String {
        let mut v = vec![0u8; chunks * CS];
        for i in 0..chunks {
            let tag = if tweak.contains(&i) { 0xA5_0000 + i } else { i + 1 };
            v[i * CS..i * CS + 8].copy_from_slice(&(tag as u64).to_le_bytes());
        }
        fs::write(self.path(name), v).unwrap();
        name.to_owned()
    }
}

fn tar_of(path: &Path, files: &[(&str, &[u8])]) {
    let mut b = tar::Builder::new(File::create(path).unwrap());
    for (name, data) in files {
        let mut h = tar::Header::new_gnu();
        h.set_size(data.len() as u64);
        h.set_mode(0o644);
        h.set_mtime(1_600_000_000);
        h.set_cksum();
        b.append_data(&mut h, name, *data).unwrap();
    }
    b.finish().unwrap();
}

#[test]
fn flatten_is_deterministic_and_empty_input_gives_a_header() {
    let env = Env::new();
    tar_of(&env.path("l1.tar"), &[("etc/a", b"one"), ("bin/x", &[7u8; 10_000])]);
    tar_of(&env.path("l2.tar"), &[("etc/a", b"two"), ("etc/.wh.gone", b"")]);
    let a = env.ok(&["flatten", "l1.tar", "l2.tar", "-o", "a.img"]);
    let b = env.ok(&["flatten", "l1.tar", "l2.tar", "-o", "b.img"]);
    assert_eq!(a["sha256"], b["sha256"]);
    assert_eq!(fs::read(env.path("a.img")).unwrap(), fs::read(env.path("b.img")).unwrap());
    assert!(a["config_hash"].as_str().unwrap().len() == 64);

    tar_of(&env.path("empty.tar"), &[]);
    let e = env.ok(&["flatten", "empty.tar", "-o", "e.img"]);
    assert_eq!(e["entries"], 0);
    assert_eq!(e["length"], 4096);

    let (code, v) = env.json(&["flatten", "missing.tar", "-o", "x.img"]);
    assert_ne!(code, 0);
    assert!(v["error"].as_str().unwrap().contains("layer 0"), "{v}");
}

#[test]
fn upload_reports_constructed_unique_fractions() {
    let env = Env::new();
    let base = env.write_image("base.img", 100, &[]);
    let derived = env.write_image("derived.img", 100, &[3, 17, 42, 77, 99]);
    assert_eq!(env.ok(&["upload", &base])["new_chunks"], 100);
    let d = env.ok(&["upload", &derived]);
    assert_eq!((d["new_chunks"].as_u64(), d["data_chunks"].as_u64()), (Some(5), Some(100)));
    assert_eq!(env.ok(&["upload", &base])["new_chunks"], 0);
    env.ok(&["gc", "rotate"]);
    let r = env.ok(&["upload", &base]);
    assert_eq!(r["unique_fraction"], 1.0);

    let s = env.ok(&["stats"]);
    assert_eq!(s["uploads"].as_array().unwrap().len(), 4);
    assert_eq!(s["dedup"]["fraction_zero_unique"], 0.25);
}

#[test]
fn read_bench_fetches_only_touched_chunks_and_warms_l1() {
    let env = Env::new();
    let img = env.write_image("img", 200, &[]);
    let id = env.ok(&["upload", &img])["manifest_id"].as_str().unwrap().to_owned();

    let r = env.ok(&["--seed", "5", "read-bench", &id, "--passes", "2"]);
    assert_eq!(r["ops"], 13); // ceil(0.064 * 200)
    assert_eq!(r["fetched_only_touched"], true);
    assert_eq!(r["fetched_chunks"], r["touched_chunks"]);
    let passes = r["passes"].as_array().unwrap();
    assert_eq!(passes[0]["l3"], 13);
    assert_eq!(passes[1]["l1_fraction"], 1.0);
    assert_eq!(r["reads"].as_array().unwrap().len(), 26);

    fs::write(env.path("empty.trace"), "# nothing\n").unwrap();
    let r = env.ok(&["read-bench", &id, "--trace", "empty.trace"]);
    assert_eq!(r["fetched_chunks"], 0);

    fs::write(env.path("rw.trace"), "W 10 ffff\nR 0 16\nR 4094 4\n").unwrap();
    let r = env.ok(&["read-bench", &id, "--trace", "rw.trace"]);
    assert_eq!(r["passes"][0]["writes"], 1);
    assert_eq!(r["fetched_chunks"], 2);

    fs::write(env.path("bad.trace"), "R x 1\n").unwrap();
    assert_eq!(env.json(&["read-bench", &id, "--trace", "bad.trace"]).0, 2);
}

#[test]
fn corrupted_chunk_aborts_with_integrity_status() {
    let env = Env::new();
    let img = env.write_image("img", 4, &[]);
    let up = env.ok(&["upload", &img]);
    let id = up["manifest_id"].as_str().unwrap().to_owned();
    let chunks = env.path("st/objects/root-000001").join(ObjectKind::Chunk.dir_name());
    for entry in fs::read_dir(&chunks).unwrap() {
        let p = entry.unwrap().path();
        let mut bytes = fs::read(&p).unwrap();
        bytes[100] ^= 1;
        fs::remove_file(&p).unwrap();
        fs::write(&p, bytes).unwrap();
    }
    fs::write(env.path("t"), "R 0 4096\n").unwrap();
    let (code, v) = env.json(&["read-bench", &id, "--trace", "t"]);
    assert_eq!(code, 3, "{v}");
    assert!(v["error"].as_str().unwrap().contains("chunk 0"), "{v}");
}

#[test]
fn lifecycle_drill_with_refusals() {
    let env = Env::new();
    let keep = env.write_image("keep.img", 10, &[]);
    let drop = env.write_image("drop.img", 10, &[1, 2, 3]);
    let keep_id = env.ok(&["upload", &keep])["manifest_id"].as_str().unwrap().to_owned();
    let drop_id = env.ok(&["upload", &drop])["manifest_id"].as_str().unwrap().to_owned();
    env.ok(&["gc", "release", &drop_id]);
    env.ok(&["gc", "rotate"]);

    // Live manifest not yet migrated.
    let (code, v) = env.json(&["gc", "expire", "root-000001"]);
    assert_eq!(code, 4);
    assert!(v["error"].as_str().unwrap().contains(&keep_id), "{v}");

    let m = env.ok(&["gc", "migrate"]);
    assert_eq!(m["migrated"].as_array().unwrap().len(), 1);
    env.ok(&["gc", "expire", "root-000001"]);

    // A read of the released manifest can only come from the expired root.
    fs::write(env.path("t"), "R 0 16\n").unwrap();
    env.ok(&["read-bench", &drop_id, "--trace", "t"]);
    env.ok(&["gc", "tick", "10"]);
    let (code, v) = env.json(&["gc", "delete", "root-000001"]);
    assert_eq!(code, 4, "{v}");
    assert!(v["error"].as_str().unwrap().contains("alarm"), "{v}");
    // One for the manifest, one for the chunk the trace read.
    assert_eq!(env.ok(&["gc", "status"])["alarms"].as_array().unwrap().len(), 2);
    assert_eq!(env.ok(&["gc", "ack-alarms"])["acknowledged"], 2);
    env.ok(&["gc", "delete", "root-000001"]);

    let r = env.ok(&["read-bench", &keep_id, "--trace", "t"]);
    assert_eq!(r["root"], 2);
    let status = env.ok(&["gc", "status"]);
    assert_eq!(status["roots"][0]["state"], "deleted");
    let (code, v) = env.json(&["read-bench", &drop_id, "--trace", "t"]);
    assert_eq!(code, 1, "{v}");
}

#[test]
fn gc_refuses_while_the_store_is_locked() {
    let env = Env::new();
    let lock = File::options().write(true).open(env.path("st/lock")).unwrap();
    lock.lock().unwrap();
    let (code, v) = env.json(&["gc", "status"]);
    assert_eq!(code, 1);
    assert!(v["error"].as_str().unwrap().contains("locked"), "{v}");
    drop(lock);
    env.ok(&["gc", "status"]);
}

#[test]
fn invalid_inputs_exit_with_validation_status() {
    let env = Env::new();
    fs::write(env.path("bad.toml"), "chunk_size = 1000\n").unwrap();
    let (code, v) = env.json(&["--config", "bad.toml", "stats"]);
    assert_eq!(code, 2);
    assert!(v["error"].as_str().unwrap().contains("chunk_size"));
    assert_eq!(env.json(&["read-bench", "nothex"]).0, 2);
    let out = env.run(&["--store", "nowhere", "stats"]);
    assert_eq!(out.status.code(), Some(2));
    let img = env.write_image("img", 1, &[]);
    assert_eq!(env.json(&["upload", &img, "--key-id", "nobody"]).0, 2);
}

fn bundled(name: &str) -> SimConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../sim/configs").join(name);
    SimConfig::from_toml(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_bundled_configs_shortened() {
    let env = Env::new();
    let mut scan = bundled("scan.toml");
    scan.duration = 25.0;
    let mut drill = bundled("cold_start.toml");
    drill.duration = 40.0;
    drill.drill.as_mut().unwrap().flush_at = 20.0;
    let mut tail = bundled("tail.toml");
    tail.duration = 1.0;
    for (name, cfg) in [("scan", scan), ("drill", drill), ("tail", tail)] {
        fs::write(env.path(&format!("{name}.toml")), cfg.to_toml()).unwrap();
        let out_a = format!("{name}-a");
        let a = env.ok(&["simulate", &format!("{name}.toml"), "--out", &out_a]);
        assert_eq!(a["config_hash"], cfg.hash());
        for f in a["files"].as_array().unwrap() {
            assert!(Path::new(f.as_str().unwrap()).is_absolute() || env.path(f.as_str().unwrap()).exists());
        }
        if name != "tail" {
            let out_b = format!("{name}-b");
            env.ok(&["simulate", &format!("{name}.toml"), "--out", &out_b]);
            for entry in fs::read_dir(env.path(&out_a)).unwrap() {
                let f = entry.unwrap().file_name();
                assert_eq!(fs::read(env.path(&out_a).join(&f)).unwrap(), fs::read(env.path(&out_b).join(&f)).unwrap(), "{f:?}");
            }
        }
    }
    let csv = fs::read_to_string(env.path("scan-a/lru-1-buckets.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let (a, b, c) = (col("l1_fraction"), col("l2_fraction"), col("origin_fraction"));
    for row in rdr.records() {
        let row = row.unwrap();
        if row[a].is_empty() {
            continue;
        }
        let s: f64 = [a, b, c].iter().map(|&i| row[i].parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn simulate_missing_field_names_it() {
    let env = Env::new();
    let text = bundled("scan.toml").to_toml();
    let broken: String = text.lines().filter(|l| !l.starts_with("arrival_rate")).map(|l| format!("{l}\n")).collect();
    fs::write(env.path("broken.toml"), broken).unwrap();
    let (code, v) = env.json(&["simulate", "broken.toml"]);
    assert_eq!(code, 2);
    assert!(v["error"].as_str().unwrap().contains("workload.arrival_rate"), "{v}");
}
