//! Delta lifecycle: incremental flush into the nearest partitions, growth
//! accounting and full rebuilds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{self, ClusterReport, ClusteringConfig};
use crate::search::centroid_space;
use crate::storage::{Database, IndexMeta, Snapshot, DELTA};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenancePolicy {
    /// Rebuild once average partition size grows by this fraction.
    pub growth_threshold: f64,
    /// Delta size above which a flush is recommended.
    pub delta_flush_trigger: u64,
    /// Probe count whose scan volume `Nprobe::Auto` preserves.
    pub base_nprobe: usize,
}

impl Default for MaintenancePolicy {
    fn default() -> Self {
        Self {
            growth_threshold: 0.5,
            delta_flush_trigger: 10_000,
            base_nprobe: 10,
        }
    }
}

impl MaintenancePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.growth_threshold > 0.0 && self.growth_threshold.is_finite()) {
            return Err(Error::InvalidArgument("growth threshold must be positive".into()));
        }
        if self.base_nprobe == 0 {
            return Err(Error::InvalidArgument("base nprobe must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub version: u64,
    pub vectors: u64,
    pub partitions: usize,
    pub partition_sizes: BTreeMap<u32, u64>,
    pub delta: u64,
    pub baseline_avg: f64,
    pub current_avg: f64,
    /// `current_avg / baseline_avg - 1`, 0 before the first build.
    pub growth: f64,
    pub flush_recommended: bool,
    pub builds: u64,
    pub flushes: u64,
}

fn assemble(snap: &Snapshot, sizes: BTreeMap<u32, u64>, delta: u64, policy: &MaintenancePolicy) -> IndexStats {
    let meta = snap.index_meta();
    let k = snap.centroid_count();
    let indexed: u64 = sizes.values().sum();
    let current_avg = if k == 0 { 0.0 } else { indexed as f64 / k as f64 };
    let growth = if meta.built && meta.baseline_avg > 0.0 {
        current_avg / meta.baseline_avg - 1.0
    } else {
        0.0
    };
    IndexStats {
        version: snap.version(),
        vectors: indexed + delta,
        partitions: k,
        partition_sizes: sizes,
        delta,
        baseline_avg: meta.baseline_avg,
        current_avg,
        growth,
        flush_recommended: delta > policy.delta_flush_trigger,
        builds: meta.builds,
        flushes: meta.flushes,
    }
}

/// Stats from the maintained partition counters.
pub fn compute_stats(snap: &Snapshot, policy: &MaintenancePolicy) -> IndexStats {
    let sizes = snap
        .scan_centroids()
        .iter()
        .map(|c| (c.partition_id, snap.partition_size(c.partition_id)))
        .collect();
    assemble(snap, sizes, snap.delta_count(), policy)
}

/// Same as [`compute_stats`] but counted by scanning every partition.
pub fn scan_stats(snap: &Snapshot, policy: &MaintenancePolicy) -> Result<IndexStats> {
    let mut sizes: BTreeMap<u32, u64> = snap.scan_centroids().iter().map(|c| (c.partition_id, 0)).collect();
    let mut delta = 0;
    for p in snap.partition_ids() {
        let mut n = 0;
        for r in snap.scan_partition(p) {
            r?;
            n += 1;
        }
        if p == DELTA {
            delta = n;
        } else {
            sizes.insert(p, n);
        }
    }
    Ok(assemble(snap, sizes, delta, policy))
}

pub fn should_rebuild(stats: &IndexStats, policy: &MaintenancePolicy) -> bool {
    stats.growth >= policy.growth_threshold
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlushReport {
    pub vectors_moved: u64,
    pub centroids_updated: u64,
    /// Vector assignment writes plus centroid row writes.
    pub row_writes: u64,
    pub version: u64,
}

/// Moves every delta vector to its nearest centroid, updating that centroid
/// to the running mean `(m c + x) / (m + 1)` in flush order.
pub fn flush_delta(db: &Database) -> Result<FlushReport> {
    let mut txn = db.begin_write()?;
    let snap = txn.base_snapshot();
    if snap.centroid_count() == 0 || snap.delta_count() == 0 {
        return Ok(FlushReport {
            version: snap.version(),
            ..Default::default()
        });
    }
    let dim = snap.dimension();
    let records = snap.scan_centroids();
    let ids: Vec<u32> = records.iter().map(|c| c.partition_id).collect();
    let mut data: Vec<f32> = records.iter().flat_map(|c| c.centroid.iter().copied()).collect();
    let mut sizes: Vec<u64> = ids.iter().map(|&p| snap.partition_size(p)).collect();
    let mut touched = vec![false; ids.len()];
    let mut moves = Vec::with_capacity(snap.delta_count() as usize);
    for r in snap.scan_partition(DELTA) {
        let r = r?;
        let x = centroid_space(&snap, &r.embedding);
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for c in 0..ids.len() {
            let d = sq_l2(&x, &data[c * dim..(c + 1) * dim]);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        let m = sizes[best] as f64;
        for (cj, &xj) in data[best * dim..(best + 1) * dim].iter_mut().zip(&x) {
            *cj = ((m * *cj as f64 + xj as f64) / (m + 1.0)) as f32;
        }
        sizes[best] += 1;
        touched[best] = true;
        moves.push((r.vector_id, ids[best]));
    }
    for (c, &id) in ids.iter().enumerate() {
        if touched[c] {
            txn.set_centroid(id, &data[c * dim..(c + 1) * dim])?;
        }
    }
    txn.update_assignments(moves)?;
    let mut meta = txn.index_meta();
    meta.flushes += 1;
    txn.set_index_meta(meta);
    txn.refresh_stats();
    let info = txn.commit()?;
    Ok(FlushReport {
        vectors_moved: info.counters.vectors_moved,
        centroids_updated: info.counters.centroids_written,
        row_writes: info.counters.vectors_moved + info.counters.centroids_written,
        version: info.version,
    })
}

fn sq_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebuildReport {
    pub clustering: ClusterReport,
    pub row_writes: u64,
    pub baseline_avg: f64,
    pub version: u64,
}

/// Re-clusters everything, DELTA included, and resets the growth baseline.
pub fn full_rebuild(db: &Database, cfg: &ClusteringConfig, policy: &MaintenancePolicy) -> Result<RebuildReport> {
    policy.validate()?;
    let mut txn = db.begin_write()?;
    let report = clustering::cluster_txn(&mut txn, cfg)?;
    let old = txn.index_meta();
    let baseline_avg = report.vectors as f64 / report.k as f64;
    txn.set_index_meta(IndexMeta {
        built: true,
        baseline_avg,
        target_scanned: policy.base_nprobe as f64 * baseline_avg,
        base_nprobe: policy.base_nprobe,
        target_size: cfg.target_size,
        builds: old.builds + 1,
        flushes: old.flushes,
    });
    txn.refresh_stats();
    let info = txn.commit()?;
    Ok(RebuildReport {
        clustering: report,
        row_writes: info.counters.vectors_moved + info.counters.centroids_written,
        baseline_avg,
        version: info.version,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoReport {
    pub flush: FlushReport,
    pub growth: f64,
    pub rebuild: Option<RebuildReport>,
}

/// Flush, then rebuild if growth crossed the threshold. A store without an
/// index is built directly.
pub fn auto(db: &Database, cfg: &ClusteringConfig, policy: &MaintenancePolicy) -> Result<AutoReport> {
    policy.validate()?;
    if db.snapshot().centroid_count() == 0 {
        let rebuild = if db.snapshot().vector_count() > 0 {
            Some(full_rebuild(db, cfg, policy)?)
        } else {
            None
        };
        return Ok(AutoReport {
            flush: FlushReport {
                version: db.snapshot().version(),
                ..Default::default()
            },
            growth: 0.0,
            rebuild,
        });
    }
    let flush = flush_delta(db)?;
    let stats = compute_stats(&db.snapshot(), policy);
    let rebuild = if should_rebuild(&stats, policy) {
        Some(full_rebuild(db, cfg, policy)?)
    } else {
        None
    };
    Ok(AutoReport {
        flush,
        growth: stats.growth,
        rebuild,
    })
}
