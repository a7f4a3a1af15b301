use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::PathBuf;

use ivfdb::storage::{AttributeRecord, ColumnType, Schema};
use ivfdb::vecfile::open_fvecs;
use ivfdb::{Database, Metric};
use serde::{Deserialize, Serialize};

use crate::config::parse;
use crate::readers::{with_readers, ReaderReport};
use crate::{print_json, CliResult, Context, Failure};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Vectors in fvecs format.
    #[arg(long)]
    input: PathBuf,
    /// Metric for a new store: l2 or cosine.
    #[arg(long)]
    metric: Option<String>,
    /// JSON lines `{"asset_id": .., "values": {..}}`; line i belongs to vector i.
    #[arg(long)]
    attrs: Option<PathBuf>,
    /// Asset ids default to `<prefix>:<i>`.
    #[arg(long)]
    asset_prefix: Option<String>,
    /// Attribute columns `name:type,...`; undeclared columns are inferred.
    #[arg(long)]
    schema: Option<String>,
    /// Vectors per commit.
    #[arg(long, default_value_t = 10_000)]
    commit_every: usize,
    /// Concurrent reader workers while ingesting.
    #[arg(long, default_value_t = 0)]
    readers: usize,
}

#[derive(Debug, Serialize)]
struct Report {
    ingested: u64,
    vectors: u64,
    assets: usize,
    delta: u64,
    dimension: usize,
    metric: Metric,
    version: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    readers: Option<ReaderReport>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttrLine {
    asset_id: Option<String>,
    #[serde(default)]
    values: serde_json::Map<String, serde_json::Value>,
}

struct AttrReader {
    lines: Lines<BufReader<File>>,
    line: usize,
}

impl AttrReader {
    fn next(&mut self) -> CliResult<Option<AttrLine>> {
        loop {
            let Some(line) = self.lines.next() else {
                return Ok(None);
            };
            self.line += 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line)
                .map(Some)
                .map_err(|e| Failure::validation(format!("attributes line {}: {e}", self.line)));
        }
    }
}

fn infer(v: &serde_json::Value) -> Option<ColumnType> {
    match v {
        serde_json::Value::Number(n) if n.is_i64() => Some(ColumnType::Int),
        serde_json::Value::Number(_) => Some(ColumnType::Float),
        serde_json::Value::String(_) => Some(ColumnType::String),
        serde_json::Value::Array(_) => Some(ColumnType::Tokens),
        _ => None,
    }
}

pub fn run(ctx: &Context, a: Args) -> CliResult<()> {
    if a.commit_every == 0 {
        return Err(Failure::validation("--commit-every must be at least 1"));
    }
    let open_input = |p: &PathBuf| {
        open_fvecs(p).map_err(|e| Failure::validation(format!("cannot open {}: {e}", p.display())))
    };
    let mut vectors = open_input(&a.input)?.peekable();
    let first = match vectors.peek() {
        Some(Ok(v)) => v.len(),
        Some(Err(_)) => return Err(vectors.next().unwrap().unwrap_err().into()),
        None => return Err(Failure::validation(format!("{} holds no vectors", a.input.display()))),
    };
    let mut cfg = ctx.db_config(Some(first));
    if let Some(m) = a.metric.as_deref().or(ctx.file.metric.as_deref()) {
        cfg = cfg.metric(parse(m)?);
    }
    if let Some(s) = a.schema.as_deref().or(ctx.file.schema.as_deref()) {
        cfg = cfg.schema(Schema::parse(s)?);
    }
    let db = Database::open(ctx.db_path()?, cfg)?;
    let mut attrs = match &a.attrs {
        Some(p) => Some(AttrReader {
            lines: BufReader::new(
                File::open(p).map_err(|e| Failure::validation(format!("cannot open {}: {e}", p.display())))?,
            )
            .lines(),
            line: 0,
        }),
        None => None,
    };
    let prefix = a
        .asset_prefix
        .clone()
        .or_else(|| ctx.file.asset_prefix.clone())
        .unwrap_or_else(|| "vec".into());

    let (ingested, readers) = with_readers(&db, a.readers, || -> CliResult<u64> {
        let mut count = 0u64;
        let mut txn = db.begin_write()?;
        let mut staged = 0;
        for v in vectors.by_ref() {
            let v = v?;
            let line = match attrs.as_mut() {
                Some(r) => r.next()?,
                None => None,
            };
            let asset = line
                .as_ref()
                .and_then(|l| l.asset_id.clone())
                .unwrap_or_else(|| format!("{prefix}:{count}"));
            let record = match &line {
                Some(l) => {
                    let mut extra = Schema::new();
                    for (col, val) in &l.values {
                        if txn.schema().column(col).is_err() {
                            if let Some(ty) = infer(val) {
                                extra = extra.with_column(col.clone(), ty);
                            }
                        }
                    }
                    if !extra.columns.is_empty() {
                        txn.extend_schema(&extra)?;
                    }
                    Some(AttributeRecord::from_json(txn.schema(), &l.values)?)
                }
                None => None,
            };
            txn.upsert_vectors(&asset, &[v], record.as_ref())?;
            count += 1;
            staged += 1;
            if staged == a.commit_every {
                txn.commit()?;
                txn = db.begin_write()?;
                staged = 0;
            }
        }
        txn.commit()?;
        Ok(count)
    });
    let ingested = ingested?;
    let snap = db.snapshot();
    print_json(&Report {
        ingested,
        vectors: snap.vector_count(),
        assets: snap.asset_count(),
        delta: snap.delta_count(),
        dimension: snap.dimension(),
        metric: snap.metric(),
        version: snap.version(),
        readers,
    })
}
