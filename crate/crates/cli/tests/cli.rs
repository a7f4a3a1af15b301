use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ivfdb::synthetic::{uniform, Clustered};
use ivfdb::vecfile::{write_fvecs, write_ivecs};
use serde_json::Value;
use tempfile::TempDir;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn db(&self) -> String {
        self.path("t.db").display().to_string()
    }

    fn fvecs(&self, name: &str, rows: &[Vec<f32>]) -> String {
        let p = self.path(name);
        write_fvecs(&p, rows).unwrap();
        p.display().to_string()
    }

    fn raw(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ivfdb"))
            .args(args)
            .env_remove("MICRONN_DB")
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    /// Runs against the default store and parses stdout as one JSON value.
    fn ok(&self, args: &[&str]) -> Value {
        let db = self.db();
        let mut full = vec!["--db", db.as_str()];
        full.extend_from_slice(args);
        let out = self.raw(&full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }

    /// JSON-lines output of `query`.
    fn lines(&self, args: &[&str]) -> Vec<Value> {
        let db = self.db();
        let mut full = vec!["query", "--db", db.as_str()];
        full.extend_from_slice(args);
        let out = self.raw(&full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.raw(args).status.code().unwrap()
    }
}

fn hits(line: &Value) -> Vec<(String, f64)> {
    line["hits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| (h["asset_id"].as_str().unwrap().to_string(), h["distance"].as_f64().unwrap()))
        .collect()
}

fn index_of(asset: &str) -> usize {
    asset.rsplit(':').next().unwrap().parse().unwrap()
}

fn sq(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn exact_ids(base: &[Vec<f32>], q: &[f32], k: usize) -> Vec<i32> {
    let mut d: Vec<(f32, usize)> = base.iter().enumerate().map(|(i, v)| (sq(v, q), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.iter().take(k).map(|&(_, i)| i as i32).collect()
}

/// Ingests `n` clustered vectors and builds with `target` per partition.
fn built(env: &Env, n: usize, dim: usize, target: usize) -> Vec<Vec<f32>> {
    let base = Clustered::new(dim, 20, 0.3, 3).take_vec(n);
    let input = env.fvecs("base.fvecs", &base);
    env.ok(&["ingest", "--input", &input]);
    env.ok(&["build", "--target-size", &target.to_string()]);
    base
}

#[test]
fn ingest_and_exact_query_on_tiny_input() {
    let env = Env::new();
    let base = vec![vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 2.0, 0.0, 1.0]];
    let input = env.fvecs("tiny.fvecs", &base);
    let r = env.ok(&["ingest", "--input", &input]);
    assert_eq!(r["ingested"], 3);
    assert_eq!(r["vectors"], 3);
    assert_eq!(r["dimension"], 4);
    assert_eq!(r["metric"], "l2");

    let q = env.fvecs("q.fvecs", &[vec![0.5, 0.5, 0.0, 0.0]]);
    let out = env.lines(&["--query", &q, "--k", "3", "--exact"]);
    assert_eq!(out.len(), 1);
    let got = hits(&out[0]);
    assert_eq!(
        got,
        vec![("vec:0".into(), 0.5), ("vec:1".into(), 0.5), ("vec:2".into(), 0.25 + 2.25 + 1.0)]
    );
}

#[test]
fn reingest_replaces_assets() {
    let env = Env::new();
    let input = env.fvecs("tiny.fvecs", &uniform(3, 4, 1));
    env.ok(&["ingest", "--input", &input]);
    let r = env.ok(&["ingest", "--input", &input]);
    assert_eq!(r["vectors"], 3);
    assert_eq!(r["assets"], 3);
}

#[test]
fn build_partition_counts_and_determinism() {
    let env = Env::new();
    let base = uniform(10_000, 8, 5);
    let input = env.fvecs("base.fvecs", &base);
    env.ok(&["ingest", "--input", &input]);
    let a = env.ok(&["build", "--target-size", "100", "--seed", "9"]);
    assert_eq!(a["clustering"]["k"], 100);
    assert_eq!(a["clustering"]["vectors"], 10_000);
    let stats = env.ok(&["maintain", "stats"]);
    assert_eq!(stats["partitions"], 100);
    assert_eq!(stats["growth"], 0.0);

    let b = env.ok(&["build", "--target-size", "100", "--seed", "9"]);
    assert_eq!(a["centroid_crc32"], b["centroid_crc32"]);
    let c = env.ok(&["build", "--target-size", "100", "--seed", "10"]);
    assert_ne!(a["centroid_crc32"], c["centroid_crc32"]);

    let one = env.ok(&["build", "--target-size", "20000"]);
    assert_eq!(one["clustering"]["k"], 1);
    assert_eq!(env.ok(&["maintain", "stats"])["partitions"], 1);
}

#[test]
fn filtered_results_satisfy_predicate() {
    let env = Env::new();
    let base = Clustered::new(8, 20, 0.3, 3).take_vec(3000);
    let input = env.fvecs("base.fvecs", &base);
    let attrs: String = (0..base.len())
        .map(|i| {
            let tag = if i % 3 == 0 { "cat" } else { "dog" };
            format!("{{\"values\":{{\"n\":{},\"tags\":[\"{tag}\"]}}}}\n", i % 10)
        })
        .collect();
    std::fs::write(env.path("a.jsonl"), attrs).unwrap();
    env.ok(&["ingest", "--input", &input, "--attrs", "a.jsonl"]);
    env.ok(&["build", "--target-size", "100"]);
    let q = env.fvecs("q.fvecs", &uniform(10, 8, 2));
    let filter = "n < 3 AND tags CONTAINS 'cat'";
    let keep = |i: usize| i % 10 < 3 && i % 3 == 0;
    let truth: Vec<Vec<(String, f64)>> = env
        .lines(&["--query", &q, "--k", "5", "--exact", "--filter", filter])
        .iter()
        .map(hits)
        .collect();
    for mode in ["pre", "post", "auto"] {
        let out = env.lines(&["--query", &q, "--k", "5", "--nprobe", "30", "--filter", filter, "--mode", mode, "--explain"]);
        for (line, want) in out.iter().zip(&truth) {
            for (asset, _) in hits(line) {
                assert!(keep(index_of(&asset)), "{mode}: {asset}");
            }
            if mode == "pre" {
                assert_eq!(&hits(line), want);
                assert_eq!(line["plan"]["plan"], "prefilter");
            }
            if mode == "post" {
                assert_eq!(line["plan"]["plan"], "postfilter");
            }
        }
    }
    assert_eq!(env.code(&["--db", &env.db(), "query", "--query", &q, "--filter", "nope = 1"]), 2);
    assert_eq!(env.code(&["--db", &env.db(), "query", "--query", &q, "--filter", "n <"]), 2);
}

#[test]
fn batch_matches_sequential() {
    let env = Env::new();
    built(&env, 4000, 8, 50);
    let q = env.fvecs("q.fvecs", &uniform(40, 8, 11));
    let seq = env.lines(&["--query", &q, "--k", "10", "--nprobe", "6"]);
    let bat = env.lines(&["--query", &q, "--k", "10", "--nprobe", "6", "--batch", "--explain"]);
    assert_eq!(seq.len(), 40);
    for (s, b) in seq.iter().zip(&bat) {
        assert_eq!(hits(s), hits(b));
    }
    let info = &bat[0]["batch"];
    assert!(info["partitions_scanned"].as_u64() <= info["sequential_scans"].as_u64());
}

#[test]
fn bench_recall_with_ground_truth_file() {
    let env = Env::new();
    let base = built(&env, 3000, 8, 100);
    let queries = uniform(20, 8, 4);
    let q = env.fvecs("q.fvecs", &queries);
    let gt: Vec<Vec<i32>> = queries.iter().map(|x| exact_ids(&base, x, 10)).collect();
    write_ivecs(env.path("gt.ivecs"), &gt).unwrap();
    let r = env.ok(&[
        "bench",
        "--queries",
        &q,
        "--ground-truth",
        "gt.ivecs",
        "--k",
        "10",
        "--nprobe-sweep",
        "1,2,4,8,30",
        "--batch-sizes",
        "1,7",
        "--batch-nprobe",
        "30",
        "--csv",
        "out.csv",
    ]);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    let recalls: Vec<f64> = rows[..5].iter().map(|r| r["recall_mean"].as_f64().unwrap()).collect();
    assert!(recalls.windows(2).all(|w| w[0] <= w[1] + 1e-12), "{recalls:?}");
    assert_eq!(recalls[4], 1.0);
    for b in &rows[5..] {
        assert_eq!(b["mode"], "batch");
        assert_eq!(b["recall_mean"], 1.0);
    }
    let csv = std::fs::read_to_string(env.path("out.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    assert!(csv.starts_with("dataset,n,d,metric,mode"));

    let cold = env.ok(&["bench", "--queries", &q, "--compute-gt", "--k", "10", "--nprobe-sweep", "30", "--purge-cache"]);
    assert_eq!(cold["rows"][0]["cache"], "cold");
    assert_eq!(cold["rows"][0]["recall_mean"], 1.0);

    write_ivecs(env.path("short.ivecs"), &gt[..5]).unwrap();
    let db = env.db();
    let short = ["--db", &db, "bench", "--queries", &q, "--ground-truth", "short.ivecs", "--k", "10"];
    assert_eq!(env.code(&short), 2);
    let narrow = ["--db", &db, "bench", "--queries", &q, "--ground-truth", "gt.ivecs", "--k", "20"];
    assert_eq!(env.code(&narrow), 2);
}

#[test]
fn maintenance_flush_and_auto_rebuild() {
    let env = Env::new();
    let mut gen = Clustered::new(8, 20, 0.3, 3);
    let base = gen.take_vec(2000);
    let input = env.fvecs("base.fvecs", &base);
    env.ok(&["ingest", "--input", &input]);
    env.ok(&["build", "--target-size", "100"]);

    let flush = env.ok(&["maintain", "flush"]);
    assert_eq!(flush["vectors_moved"], 0);
    assert_eq!(flush["row_writes"], 0);

    let more = env.fvecs("more.fvecs", &gen.take_vec(600));
    env.ok(&["ingest", "--input", &more, "--asset-prefix", "more"]);
    let small = env.ok(&["maintain", "auto"]);
    assert_eq!(small["flush"]["vectors_moved"], 600);
    assert!(small["rebuild"].is_null());
    let g = small["growth"].as_f64().unwrap();
    assert!((g - 0.3).abs() < 1e-9, "{g}");
    let scanned = env.ok(&["maintain", "stats", "--scan"]);
    assert_eq!(scanned["vectors"], 2600);

    let most = env.fvecs("most.fvecs", &gen.take_vec(400));
    env.ok(&["ingest", "--input", &most, "--asset-prefix", "most"]);
    let big = env.ok(&["maintain", "auto"]);
    assert!(big["rebuild"].is_object());
    assert_eq!(env.ok(&["maintain", "stats"])["growth"], 0.0);
}

#[test]
fn ingest_and_maintain_with_readers() {
    let env = Env::new();
    built(&env, 2000, 8, 100);
    let more = env.fvecs("more.fvecs", &uniform(500, 8, 8));
    let r = env.ok(&["ingest", "--input", &more, "--commit-every", "50", "--readers", "2", "--asset-prefix", "m"]);
    assert_eq!(r["readers"]["violations"], 0);
    let m = env.ok(&["maintain", "--readers", "2", "rebuild"]);
    assert_eq!(m["readers"]["violations"], 0);
}

#[test]
fn exit_codes() {
    let env = Env::new();
    let db = env.db();
    let q = env.fvecs("q.fvecs", &uniform(2, 4, 1));
    assert_eq!(env.code(&["--db", &db, "query", "--query", &q]), 2);
    assert_eq!(env.code(&["query", "--query", &q]), 2);
    assert_eq!(env.code(&["--db", &db, "frobnicate"]), 2);
    assert_eq!(env.code(&["--db", &db, "ingest", "--input", "missing.fvecs"]), 2);
    assert_eq!(env.code(&["--help"]), 0);

    std::fs::write(env.path("bad.fvecs"), [4u8, 0, 0, 0, 1, 2]).unwrap();
    assert_eq!(env.code(&["--db", &db, "ingest", "--input", "bad.fvecs"]), 2);

    env.ok(&["ingest", "--input", &q]);
    let wrong = env.fvecs("wrong.fvecs", &uniform(2, 5, 1));
    assert_eq!(env.code(&["--db", &db, "query", "--query", &wrong]), 2);
    assert_eq!(env.code(&["--db", &db, "ingest", "--input", &q, "--metric", "cosine"]), 2);

    std::fs::write(env.path("junk.db"), vec![0xAB; 8192]).unwrap();
    let junk = env.path("junk.db").display().to_string();
    assert_eq!(env.code(&["--db", &junk, "query", "--query", &q]), 3);
}

#[test]
fn db_from_environment_and_config_file() {
    let env = Env::new();
    let input = env.fvecs("base.fvecs", &uniform(500, 4, 1));
    let out = Command::new(env!("CARGO_BIN_EXE_ivfdb"))
        .args(["ingest", "--input", &input])
        .env("MICRONN_DB", env.path("from_env.db"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&env.path("from_env.db")).exists());

    let cfg = serde_json::json!({"db": env.path("from_env.db"), "target_size": 50, "seed": 4});
    std::fs::write(env.path("cfg.json"), cfg.to_string()).unwrap();
    let out = env.raw(&["--config", "cfg.json", "build"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["clustering"]["k"], 10);

    std::fs::write(env.path("typo.json"), r#"{"target_sise": 5}"#).unwrap();
    assert_eq!(env.code(&["--config", "typo.json", "--db", "x.db", "build"]), 2);
}
