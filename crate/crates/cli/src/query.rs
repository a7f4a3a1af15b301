use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ivfdb::batch::{execute_plan, plan_batch, QueryBatch};
use ivfdb::hybrid::{self, HybridMode, Plan, PlanChoice, Predicate};
use ivfdb::search::{self, ScanTrace};
use ivfdb::vecfile::open_fvecs;
use ivfdb::{Hit, Nprobe, SearchRequest, Snapshot};
use serde::Serialize;

use crate::config::parse;
use crate::{CliResult, Context, Failure};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Query vectors in fvecs format.
    #[arg(long)]
    query: PathBuf,
    /// Results per query.
    #[arg(long)]
    k: Option<usize>,
    /// Partitions to probe, or `auto`.
    #[arg(long, conflicts_with = "exact")]
    nprobe: Option<String>,
    /// Exhaustive scan; with --filter, exact filtered search.
    #[arg(long)]
    exact: bool,
    /// Attribute predicate, e.g. `tags CONTAINS 'cat' AND n < 5`.
    #[arg(long)]
    filter: Option<String>,
    /// Hybrid plan: auto, pre or post.
    #[arg(long)]
    mode: Option<String>,
    /// Selectivity below which the optimizer prefilters.
    #[arg(long)]
    threshold: Option<f64>,
    /// Run all queries as one multi-query batch.
    #[arg(long, conflicts_with_all = ["exact", "filter"])]
    batch: bool,
    /// Add plan estimates and scan traces.
    #[arg(long)]
    explain: bool,
}

#[derive(Serialize)]
struct Line<'a> {
    query: usize,
    hits: &'a [Hit],
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<PlanChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<ScanTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch: Option<BatchInfo>,
}

#[derive(Clone, Copy, Serialize)]
struct BatchInfo {
    size: usize,
    partitions_scanned: usize,
    sequential_scans: usize,
}

struct Resolved {
    k: usize,
    nprobe: Nprobe,
    filter: Option<Predicate>,
    mode: HybridMode,
    threshold: Option<f64>,
}

fn one(snap: &Snapshot, r: &Resolved, exact: bool, q: Vec<f32>) -> CliResult<(Vec<Hit>, Option<PlanChoice>, ScanTrace)> {
    Ok(match (&r.filter, exact) {
        (None, true) => {
            let (h, t) = search::knn_exact_traced(snap, &q, r.k)?;
            (h, None, t)
        }
        (None, false) => {
            let (h, t) = search::ann_search_traced(snap, &SearchRequest::new(q, r.k, r.nprobe))?;
            (h, None, t)
        }
        (Some(p), true) => {
            let (h, t) = hybrid::prefilter_traced(snap, &q, r.k, p)?;
            (h, None, t)
        }
        (Some(p), false) => {
            let mut choice = hybrid::plan(snap, p, r.nprobe, r.threshold)?;
            match r.mode {
                HybridMode::Auto => {}
                HybridMode::PreFilter => choice.plan = Plan::PreFilter,
                HybridMode::PostFilter => choice.plan = Plan::PostFilter,
            }
            let (h, t) = match choice.plan {
                Plan::PreFilter => hybrid::prefilter_traced(snap, &q, r.k, p)?,
                Plan::PostFilter => hybrid::postfilter_traced(snap, &q, r.k, r.nprobe, p)?,
            };
            (h, Some(choice), t)
        }
    })
}

fn emit(out: &mut impl Write, line: &Line<'_>) -> CliResult<()> {
    serde_json::to_writer(&mut *out, line)?;
    writeln!(out)?;
    Ok(())
}

pub fn run(ctx: &Context, a: Args) -> CliResult<()> {
    let db = ctx.open()?;
    let snap = db.snapshot();
    let r = Resolved {
        k: a.k.or(ctx.file.k).unwrap_or(10),
        nprobe: parse(a.nprobe.as_deref().or(ctx.file.nprobe.as_deref()).unwrap_or("auto"))?,
        filter: a.filter.as_deref().map(Predicate::parse).transpose()?,
        mode: parse(a.mode.as_deref().or(ctx.file.mode.as_deref()).unwrap_or("auto"))?,
        threshold: a.threshold.or(ctx.file.threshold),
    };
    if let Some(p) = &r.filter {
        p.check(snap.schema())?;
    }
    let queries = open_fvecs(&a.query)
        .map_err(|e| Failure::validation(format!("cannot open {}: {e}", a.query.display())))?;
    let mut out = BufWriter::new(std::io::stdout().lock());
    if a.batch {
        let qs = queries.collect::<ivfdb::Result<Vec<_>>>()?;
        let batch = QueryBatch::new(qs, r.k, r.nprobe);
        let plan = plan_batch(&snap, &batch)?;
        let res = execute_plan(&snap, &batch, &plan)?;
        let info = BatchInfo {
            size: batch.len(),
            partitions_scanned: res.partitions_scanned,
            sequential_scans: res.sequential_scans,
        };
        for (i, hits) in res.results.iter().enumerate() {
            let trace = ScanTrace {
                nprobe: plan.nprobe,
                partitions: plan.per_query[i].clone(),
                vectors_scanned: plan.per_query[i].iter().map(|&p| snap.partition_size(p)).sum(),
            };
            emit(
                &mut out,
                &Line {
                    query: i,
                    hits,
                    plan: None,
                    trace: a.explain.then_some(trace),
                    batch: a.explain.then_some(info),
                },
            )?;
        }
    } else {
        for (i, q) in queries.enumerate() {
            let (hits, plan, trace) = one(&snap, &r, a.exact, q?)?;
            emit(
                &mut out,
                &Line {
                    query: i,
                    hits: &hits,
                    plan: plan.filter(|_| a.explain),
                    trace: a.explain.then_some(trace),
                    batch: None,
                },
            )?;
        }
    }
    out.flush()?;
    Ok(())
}
