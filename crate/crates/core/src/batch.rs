//! Multi-query execution: each partition needed by a batch is scanned once
//! and its rows are scored against every query that needs it in shared
//! distance blocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::search::{self, check_k, check_query, Nprobe, ResultSet, ScanJob, SearchRequest};
use crate::storage::Snapshot;
use crate::{Error, Result};

/// Queries sharing `k` and `nprobe`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub id: u64,
    pub queries: Vec<Vec<f32>>,
    pub k: usize,
    pub nprobe: Nprobe,
}

impl QueryBatch {
    pub fn new(queries: Vec<Vec<f32>>, k: usize, nprobe: impl Into<Nprobe>) -> Self {
        Self {
            id: 0,
            queries,
            k,
            nprobe: nprobe.into(),
        }
    }

    /// Rejects requests that disagree on `k` or `nprobe`.
    pub fn from_requests(requests: &[SearchRequest]) -> Result<Self> {
        let first = requests
            .first()
            .ok_or_else(|| Error::InvalidArgument("a batch needs at least one query".into()))?;
        if let Some(r) = requests.iter().find(|r| r.k != first.k || r.nprobe != first.nprobe) {
            return Err(Error::InvalidArgument(format!(
                "batch queries must share K and nprobe (got K={} nprobe={:?} and K={} nprobe={:?})",
                first.k, first.nprobe, r.k, r.nprobe
            )));
        }
        Ok(Self::new(requests.iter().map(|r| r.query.clone()).collect(), first.k, first.nprobe))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    fn validate(&self, snap: &Snapshot) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::InvalidArgument("a batch needs at least one query".into()));
        }
        check_k(self.k)?;
        for q in &self.queries {
            check_query(snap, q)?;
        }
        Ok(())
    }

    fn matrix(&self) -> Vec<f32> {
        self.queries.iter().flatten().copied().collect()
    }
}

/// Partition id to the queries that need it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub groups: BTreeMap<u32, Vec<usize>>,
    /// Partitions each query would scan on its own.
    pub per_query: Vec<Vec<u32>>,
    pub nprobe: usize,
}

impl PartitionPlan {
    pub fn partitions(&self) -> usize {
        self.groups.len()
    }

    /// Partition scans the same queries would do one at a time.
    pub fn sequential_scans(&self) -> usize {
        self.per_query.iter().map(Vec::len).sum()
    }
}

pub fn plan_batch(snap: &Snapshot, batch: &QueryBatch) -> Result<PartitionPlan> {
    batch.validate(snap)?;
    let (nprobe, per_query) = if snap.centroid_count() == 0 {
        let all = search::all_partitions(snap);
        (0, vec![all; batch.len()])
    } else {
        let n = search::resolve_nprobe(snap, batch.nprobe)?;
        let probes = search::nearest_centroids_many(snap, &batch.matrix(), n)?;
        (n, probes.into_iter().map(search::with_delta).collect())
    };
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, parts) in per_query.iter().enumerate() {
        for &p in parts {
            groups.entry(p).or_default().push(i);
        }
    }
    Ok(PartitionPlan {
        groups,
        per_query,
        nprobe,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// One result set per query, in input order.
    pub results: Vec<ResultSet>,
    /// Distinct non-empty partitions scanned.
    pub partitions_scanned: usize,
    /// Non-empty partition scans sequential execution would perform.
    pub sequential_scans: usize,
    pub vectors_scored: u64,
}

pub fn execute_batch(snap: &Snapshot, batch: &QueryBatch) -> Result<BatchOutput> {
    let plan = plan_batch(snap, batch)?;
    execute_plan(snap, batch, &plan)
}

/// Runs `plan`, largest query groups first.
pub fn execute_plan(snap: &Snapshot, batch: &QueryBatch, plan: &PartitionPlan) -> Result<BatchOutput> {
    let mut jobs: Vec<ScanJob> = plan
        .groups
        .iter()
        .filter(|(&p, _)| snap.partition_size(p) > 0)
        .map(|(&p, qs)| ScanJob {
            partition: p,
            queries: qs.clone(),
        })
        .collect();
    jobs.sort_by(|a, b| b.queries.len().cmp(&a.queries.len()).then(a.partition.cmp(&b.partition)));
    let sequential_scans = plan
        .per_query
        .iter()
        .flatten()
        .filter(|&&p| snap.partition_size(p) > 0)
        .count();
    let (results, scored) = search::run_scan::<fn(&str) -> bool>(snap, &batch.matrix(), batch.k, &jobs, None)?;
    Ok(BatchOutput {
        results,
        partitions_scanned: jobs.len(),
        sequential_scans,
        vectors_scored: scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{cluster, ClusteringConfig};
    use crate::search::ann_search;
    use crate::storage::{Database, DbConfig, DELTA};
    use crate::synthetic::Clustered;

    fn store(n: usize) -> (tempfile::TempDir, Database, Clustered) {
        let dir = tempfile::tempdir().unwrap();
        let db = Database::open(dir.path().join("b.mvec"), DbConfig::new(8).sync(false)).unwrap();
        let mut gen = Clustered::new(8, 20, 0.2, 4);
        let mut t = db.begin_write().unwrap();
        for i in 0..n {
            t.upsert_vectors(&format!("v{i}"), &[gen.sample()], None).unwrap();
        }
        t.commit().unwrap();
        cluster(&db, &ClusteringConfig { target_size: 50, ..Default::default() }).unwrap();
        let mut t = db.begin_write().unwrap();
        for i in 0..30 {
            t.upsert_vectors(&format!("late{i}"), &[gen.sample()], None).unwrap();
        }
        t.commit().unwrap();
        (dir, db, gen.fork(77))
    }

    #[test]
    fn single_query_plan_and_equivalence() {
        let (_d, db, mut qg) = store(2000);
        let snap = db.snapshot();
        let q = qg.sample();
        let batch = QueryBatch::new(vec![q.clone()], 10, 4);
        let plan = plan_batch(&snap, &batch).unwrap();
        assert_eq!(plan.partitions(), 5);
        assert!(plan.groups.contains_key(&DELTA));
        let out = execute_batch(&snap, &batch).unwrap();
        assert_eq!(out.results[0], ann_search(&snap, &SearchRequest::new(q, 10, 4)).unwrap());
    }

    #[test]
    fn batches_match_sequential() {
        let (_d, db, mut qg) = store(3000);
        let snap = db.snapshot();
        for m in [2, 16, 64, 130] {
            let qs = qg.take_vec(m);
            let batch = QueryBatch::new(qs.clone(), 20, 3);
            let out = execute_batch(&snap, &batch).unwrap();
            for (q, r) in qs.iter().zip(&out.results) {
                assert_eq!(r, &ann_search(&snap, &SearchRequest::new(q.clone(), 20, 3)).unwrap());
            }
            assert!(out.partitions_scanned < out.sequential_scans);
            let plan = plan_batch(&snap, &batch).unwrap();
            for (i, parts) in plan.per_query.iter().enumerate() {
                let mut want = search::find_nearest_centroids(&snap, &qs[i], 3).unwrap();
                want.push(DELTA);
                assert_eq!(parts, &want);
                for p in parts {
                    assert_eq!(plan.groups[p].iter().filter(|&&x| x == i).count(), 1);
                }
            }
        }
    }

    #[test]
    fn duplicates_and_validation() {
        let (_d, db, mut qg) = store(1000);
        let snap = db.snapshot();
        let q = qg.sample();
        let out = execute_batch(&snap, &QueryBatch::new(vec![q.clone(); 5], 7, 2)).unwrap();
        assert!(out.results.windows(2).all(|w| w[0] == w[1]));
        let plan = plan_batch(&snap, &QueryBatch::new(vec![q.clone(); 2], 7, 2)).unwrap();
        assert!(plan.groups.values().all(|g| g == &vec![0, 1]));
        let mixed = [SearchRequest::new(q.clone(), 5, 2), SearchRequest::new(q.clone(), 6, 2)];
        assert!(QueryBatch::from_requests(&mixed).is_err());
        assert!(execute_batch(&snap, &QueryBatch::new(vec![], 5, 2)).is_err());
        assert!(execute_batch(&snap, &QueryBatch::new(vec![vec![1.0; 3]], 5, 2)).is_err());
    }
}
