use ivfdb::maintenance::{self, compute_stats, scan_stats, RebuildReport};
use ivfdb::Database;
use serde::Serialize;

use crate::config::{ClusterFlags, PolicyFlags};
use crate::readers::{with_readers, ReaderReport};
use crate::{print_json, CliResult, Context};

#[derive(clap::Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    cluster: ClusterFlags,
    #[command(flatten)]
    policy: PolicyFlags,
    /// Concurrent reader workers during the rebuild.
    #[arg(long, default_value_t = 0)]
    readers: usize,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(subcommand)]
    action: Action,
    #[command(flatten)]
    cluster: ClusterFlags,
    #[command(flatten)]
    policy: PolicyFlags,
    /// Concurrent reader workers during the operation.
    #[arg(long, default_value_t = 0, global = true)]
    readers: usize,
}

#[derive(clap::Subcommand, Debug, Clone, Copy)]
enum Action {
    /// Move delta vectors into their nearest partitions.
    Flush,
    /// Re-cluster everything.
    Rebuild,
    /// Partition sizes and growth against the last build.
    Stats {
        /// Count partition sizes by scanning instead of using stored counters.
        #[arg(long)]
        scan: bool,
    },
    /// Flush, then rebuild if growth crossed the threshold.
    Auto,
}

#[derive(Serialize)]
struct WithReaders<T: Serialize> {
    #[serde(flatten)]
    report: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    readers: Option<ReaderReport>,
}

#[derive(Serialize)]
struct BuildOutput {
    #[serde(flatten)]
    report: RebuildReport,
    /// CRC-32 of the centroid table, for determinism checks.
    centroid_crc32: u32,
}

fn centroid_crc(db: &Database) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for c in db.snapshot().scan_centroids() {
        h.update(&c.partition_id.to_le_bytes());
        for x in &c.centroid {
            h.update(&x.to_le_bytes());
        }
    }
    h.finalize()
}

fn rebuild(ctx: &Context, db: &Database, cluster: &ClusterFlags, policy: &PolicyFlags) -> CliResult<BuildOutput> {
    let report = maintenance::full_rebuild(db, &cluster.resolve(&ctx.file), &policy.resolve(&ctx.file))?;
    Ok(BuildOutput {
        report,
        centroid_crc32: centroid_crc(db),
    })
}

pub fn build(ctx: &Context, a: BuildArgs) -> CliResult<()> {
    let db = ctx.open()?;
    let (report, readers) = with_readers(&db, a.readers, || rebuild(ctx, &db, &a.cluster, &a.policy));
    print_json(&WithReaders {
        report: report?,
        readers,
    })
}

pub fn run(ctx: &Context, a: Args) -> CliResult<()> {
    let db = ctx.open()?;
    let policy = a.policy.resolve(&ctx.file);
    let (out, readers) = with_readers(&db, a.readers, || -> CliResult<serde_json::Value> {
        let value = match a.action {
            Action::Flush => serde_json::to_value(maintenance::flush_delta(&db)?),
            Action::Rebuild => serde_json::to_value(rebuild(ctx, &db, &a.cluster, &a.policy)?),
            Action::Stats { scan: false } => serde_json::to_value(compute_stats(&db.snapshot(), &policy)),
            Action::Stats { scan: true } => serde_json::to_value(scan_stats(&db.snapshot(), &policy)?),
            Action::Auto => serde_json::to_value(maintenance::auto(&db, &a.cluster.resolve(&ctx.file), &policy)?),
        };
        Ok(value?)
    });
    print_json(&WithReaders { report: out?, readers })
}
