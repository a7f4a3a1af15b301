use std::collections::HashSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ivfdb::batch::{execute_batch, QueryBatch};
use ivfdb::search::{self, ann_search_traced};
use ivfdb::vecfile::{read_fvecs, read_ivecs};
use ivfdb::{Database, Hit, Metric, Nprobe, SearchRequest, Snapshot};
use serde::Serialize;

use crate::config::parse;
use crate::{print_json, CliResult, Context, Failure};

#[derive(clap::Args, Debug)]
#[command(group(clap::ArgGroup::new("truth").required(true).args(["ground_truth", "compute_gt"])))]
pub struct Args {
    /// Query vectors in fvecs format.
    #[arg(long)]
    queries: PathBuf,
    /// Exact top-K row indices of the ingested file, ivecs format.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Compute ground truth with an exhaustive scan.
    #[arg(long)]
    compute_gt: bool,
    #[arg(long)]
    k: Option<usize>,
    /// Comma separated probe counts (`auto` allowed).
    #[arg(long, default_value = "1,2,5,10,20,50")]
    nprobe_sweep: String,
    /// Comma separated batch sizes for the multi-query rows.
    #[arg(long)]
    batch_sizes: Option<String>,
    /// Probe count for the batch rows.
    #[arg(long, default_value = "10")]
    batch_nprobe: String,
    /// Reopen the store per configuration and drop caches before each query.
    #[arg(long)]
    purge_cache: bool,
    /// Asset prefix used at ingest, mapping ground-truth rows to assets.
    #[arg(long)]
    asset_prefix: Option<String>,
    /// Dataset label for the report.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub n: u64,
    pub d: usize,
    pub metric: Metric,
    pub mode: &'static str,
    pub cache: &'static str,
    pub nprobe: String,
    pub k: usize,
    pub batch_size: Option<usize>,
    pub queries: usize,
    pub recall_mean: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_mean_ms: f64,
    pub partitions_scanned: u64,
    pub sequential_scans: u64,
    pub vectors_scanned: u64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    rows: Vec<BenchRow>,
}

fn list(text: &str) -> Vec<&str> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn recall(hits: &[Hit], truth: &[u64], k: usize) -> f64 {
    let t: HashSet<u64> = truth.iter().take(k).copied().collect();
    if t.is_empty() {
        return 1.0;
    }
    hits.iter().take(k).filter(|h| t.contains(&h.vector_id)).count() as f64 / t.len() as f64
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[Duration], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1].as_secs_f64() * 1e3
}

fn truth_ids(ctx: &Context, a: &Args, snap: &Snapshot, queries: &[Vec<f32>], k: usize) -> CliResult<Vec<Vec<u64>>> {
    if a.compute_gt {
        return queries
            .iter()
            .map(|q| Ok(search::knn_exact(snap, q, k)?.iter().map(|h| h.vector_id).collect()))
            .collect();
    }
    let path = a.ground_truth.as_ref().expect("clap group");
    let rows = read_ivecs(path).map_err(|e| match e {
        ivfdb::Error::Io(io) => Failure::validation(format!("cannot read {}: {io}", path.display())),
        e => e.into(),
    })?;
    if rows.len() != queries.len() {
        return Err(Failure::validation(format!(
            "ground truth has {} rows for {} queries",
            rows.len(),
            queries.len()
        )));
    }
    let prefix = a
        .asset_prefix
        .clone()
        .or_else(|| ctx.file.asset_prefix.clone())
        .unwrap_or_else(|| "vec".into());
    rows.iter()
        .enumerate()
        .map(|(qi, row)| {
            if row.len() < k {
                return Err(Failure::validation(format!(
                    "ground truth row {qi} has {} entries, K is {k}",
                    row.len()
                )));
            }
            row[..k]
                .iter()
                .map(|&idx| {
                    snap.asset_vectors(&format!("{prefix}:{idx}"))
                        .first()
                        .copied()
                        .ok_or_else(|| Failure::validation(format!("ground truth row {qi} names unknown vector {idx}")))
                })
                .collect()
        })
        .collect()
}

struct Bench<'a> {
    ctx: &'a Context,
    db: Database,
    purge: bool,
    dataset: String,
    k: usize,
    queries: Vec<Vec<f32>>,
    truth: Vec<Vec<u64>>,
}

impl Bench<'_> {
    /// Cold runs start every configuration from a freshly opened store.
    fn prepare(&mut self) -> CliResult<()> {
        if self.purge {
            self.db = self.ctx.open()?;
            self.db.clear_cache();
        }
        Ok(())
    }

    fn row(&self, mode: &'static str, nprobe: String, batch_size: Option<usize>) -> BenchRow {
        let snap = self.db.snapshot();
        BenchRow {
            dataset: self.dataset.clone(),
            n: snap.vector_count(),
            d: snap.dimension(),
            metric: snap.metric(),
            mode,
            cache: if self.purge { "cold" } else { "warm" },
            nprobe,
            k: self.k,
            batch_size,
            queries: self.queries.len(),
            recall_mean: 0.0,
            latency_p50_ms: 0.0,
            latency_p95_ms: 0.0,
            latency_mean_ms: 0.0,
            partitions_scanned: 0,
            sequential_scans: 0,
            vectors_scanned: 0,
        }
    }

    fn single(&mut self, label: &str) -> CliResult<BenchRow> {
        let nprobe: Nprobe = parse(label)?;
        self.prepare()?;
        let snap = self.db.snapshot();
        let req = |q: &Vec<f32>| SearchRequest::new(q.clone(), self.k, nprobe);
        if !self.purge {
            for q in &self.queries {
                ann_search_traced(&snap, &req(q))?;
            }
        }
        let mut row = self.row("single", label.to_string(), None);
        let mut times = Vec::with_capacity(self.queries.len());
        let mut recalls = 0.0;
        for (q, t) in self.queries.iter().zip(&self.truth) {
            if self.purge {
                self.db.clear_cache();
            }
            let t0 = Instant::now();
            let (hits, trace) = ann_search_traced(&snap, &req(q))?;
            times.push(t0.elapsed());
            recalls += recall(&hits, t, self.k);
            let scans = trace.partitions.iter().filter(|&&p| snap.partition_size(p) > 0).count() as u64;
            row.partitions_scanned += scans;
            row.sequential_scans += scans;
            row.vectors_scanned += trace.vectors_scanned;
        }
        times.sort();
        row.recall_mean = recalls / self.queries.len() as f64;
        row.latency_p50_ms = percentile(&times, 0.5);
        row.latency_p95_ms = percentile(&times, 0.95);
        row.latency_mean_ms = times.iter().sum::<Duration>().as_secs_f64() * 1e3 / times.len() as f64;
        Ok(row)
    }

    fn batched(&mut self, size: usize, label: &str) -> CliResult<BenchRow> {
        if size == 0 {
            return Err(Failure::validation("batch sizes must be at least 1"));
        }
        let nprobe: Nprobe = parse(label)?;
        self.prepare()?;
        let snap = self.db.snapshot();
        if !self.purge {
            for chunk in self.queries.chunks(size) {
                execute_batch(&snap, &QueryBatch::new(chunk.to_vec(), self.k, nprobe))?;
            }
        }
        let mut row = self.row("batch", label.to_string(), Some(size));
        let mut per_batch = Vec::new();
        let mut recalls = 0.0;
        for (chunk, truth) in self.queries.chunks(size).zip(self.truth.chunks(size)) {
            if self.purge {
                self.db.clear_cache();
            }
            let batch = QueryBatch::new(chunk.to_vec(), self.k, nprobe);
            let t0 = Instant::now();
            let out = execute_batch(&snap, &batch)?;
            per_batch.push(t0.elapsed() / chunk.len() as u32);
            for (hits, t) in out.results.iter().zip(truth) {
                recalls += recall(hits, t, self.k);
            }
            row.partitions_scanned += out.partitions_scanned as u64;
            row.sequential_scans += out.sequential_scans as u64;
            row.vectors_scanned += out.vectors_scored;
        }
        let total: Duration = self
            .queries
            .chunks(size)
            .zip(&per_batch)
            .map(|(c, &t)| t * c.len() as u32)
            .sum();
        per_batch.sort();
        row.recall_mean = recalls / self.queries.len() as f64;
        // per-query amortized latency of each batch
        row.latency_p50_ms = percentile(&per_batch, 0.5);
        row.latency_p95_ms = percentile(&per_batch, 0.95);
        row.latency_mean_ms = total.as_secs_f64() * 1e3 / self.queries.len() as f64;
        Ok(row)
    }
}

pub fn run(ctx: &Context, a: Args) -> CliResult<()> {
    let db = ctx.open()?;
    let snap = db.snapshot();
    let k = a.k.or(ctx.file.k).unwrap_or(100);
    if k == 0 {
        return Err(Failure::validation("K must be at least 1"));
    }
    let queries = read_fvecs(&a.queries).map_err(|e| match e {
        ivfdb::Error::Io(io) => Failure::validation(format!("cannot read {}: {io}", a.queries.display())),
        e => e.into(),
    })?;
    if queries.is_empty() {
        return Err(Failure::validation("no queries"));
    }
    let truth = truth_ids(ctx, &a, &snap, &queries, k)?;
    let dataset = a.dataset.clone().unwrap_or_else(|| {
        ctx.db_path()
            .ok()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let mut bench = Bench {
        ctx,
        db,
        purge: a.purge_cache,
        dataset,
        k,
        queries,
        truth,
    };
    let mut rows = Vec::new();
    for n in list(&a.nprobe_sweep) {
        rows.push(bench.single(n)?);
    }
    if let Some(sizes) = &a.batch_sizes {
        for s in list(sizes) {
            let size = s
                .parse()
                .map_err(|_| Failure::validation(format!("batch size `{s}` is not an integer")))?;
            rows.push(bench.batched(size, &a.batch_nprobe)?);
        }
    }
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| Failure::storage(e.to_string()))?;
        for r in &rows {
            w.serialize(r).map_err(|e| Failure::storage(e.to_string()))?;
        }
        w.flush()?;
    }
    let report = BenchReport { rows };
    match &a.json {
        Some(path) => {
            let text = serde_json::to_string_pretty(&report)?;
            std::fs::write(path, text + "\n")?;
            if a.csv.is_none() {
                print_json(&report)?;
            }
            Ok(())
        }
        None => print_json(&report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let ms: Vec<Duration> = (1..=20).map(Duration::from_millis).collect();
        assert_eq!(percentile(&ms, 0.5), 10.0);
        assert_eq!(percentile(&ms, 0.95), 19.0);
        assert_eq!(percentile(&ms[..1], 0.95), 1.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }

    #[test]
    fn recall_counts_only_top_k() {
        let hit = |id| Hit {
            asset_id: "a".into(),
            vector_id: id,
            distance: 0.0,
        };
        let hits = [hit(1), hit(2), hit(9)];
        assert_eq!(recall(&hits, &[1, 2, 3], 3), 2.0 / 3.0);
        assert_eq!(recall(&hits, &[1, 2, 3], 2), 1.0);
        assert_eq!(recall(&[], &[], 5), 1.0);
    }
}
