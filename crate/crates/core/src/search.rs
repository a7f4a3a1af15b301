//! Exact and IVF-pruned nearest neighbour search over a [`Snapshot`].

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::{BlockKernel, BlockScratch, Metric, Neighbor, TopKHeap, BLOCK_ROWS};
use crate::storage::{Snapshot, DELTA};
use crate::{Error, Result};

/// Ranked hits, ascending by distance then vector id.
pub type ResultSet = Vec<Neighbor<f32>>;

/// Queries per distance block.
pub(crate) const QUERY_BLOCK: usize = 64;

/// How many partitions a query probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nprobe {
    Fixed(usize),
    /// Keep the scanned-vector budget recorded at the last build.
    Auto,
}

impl From<usize> for Nprobe {
    fn from(n: usize) -> Self {
        Nprobe::Fixed(n)
    }
}

impl std::str::FromStr for Nprobe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Nprobe::Auto);
        }
        s.parse::<usize>()
            .map(Nprobe::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("nprobe must be a positive integer or `auto`, got `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRequest {
    pub query: Vec<f32>,
    pub k: usize,
    pub nprobe: Nprobe,
}

impl SearchRequest {
    pub fn new(query: Vec<f32>, k: usize, nprobe: impl Into<Nprobe>) -> Self {
        Self {
            query,
            k,
            nprobe: nprobe.into(),
        }
    }
}

/// What a search touched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanTrace {
    /// Resolved probe count; 0 for exact scans.
    pub nprobe: usize,
    pub partitions: Vec<u32>,
    pub vectors_scanned: u64,
}

/// Checks dimension and finiteness; cosine queries must be non-zero.
pub(crate) fn check_query(snap: &Snapshot, q: &[f32]) -> Result<()> {
    if q.len() != snap.dimension() {
        return Err(Error::DimensionMismatch {
            expected: snap.dimension(),
            actual: q.len(),
        });
    }
    if let Some(i) = q.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if snap.metric() == Metric::Cosine && q.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(())
}

pub(crate) fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(())
}

/// Probe count for a request against the current index shape.
pub fn resolve_nprobe(snap: &Snapshot, nprobe: Nprobe) -> Result<usize> {
    let k = snap.centroid_count();
    match nprobe {
        Nprobe::Fixed(0) => Err(Error::InvalidArgument("nprobe must be at least 1".into())),
        Nprobe::Fixed(n) => Ok(n),
        Nprobe::Auto => {
            let meta = snap.index_meta();
            if k == 0 || !meta.built {
                return Ok(meta.base_nprobe.max(1));
            }
            let indexed = snap.vector_count() - snap.delta_count();
            let avg = indexed as f64 / k as f64;
            if avg <= 0.0 || meta.target_scanned <= 0.0 {
                return Ok(meta.base_nprobe.clamp(1, k));
            }
            Ok(((meta.target_scanned / avg).ceil() as usize).clamp(1, k))
        }
    }
}

fn normalized(q: &[f32]) -> Vec<f32> {
    let n = q.iter().map(|x| x * x).sum::<f32>().sqrt();
    q.iter().map(|x| x / n).collect()
}

/// Query rows as seen by the centroid table: unit length for cosine stores.
pub(crate) fn centroid_space(snap: &Snapshot, queries: &[f32]) -> Vec<f32> {
    match snap.metric() {
        Metric::SquaredL2 => queries.to_vec(),
        Metric::Cosine => queries
            .chunks_exact(snap.dimension())
            .flat_map(normalized)
            .collect(),
    }
}

/// The `n` nearest partitions for each query row, ascending, ties to the lower id.
pub(crate) fn nearest_centroids_many(snap: &Snapshot, queries: &[f32], n: usize) -> Result<Vec<Vec<u32>>> {
    let table = &snap.state.centroids;
    if table.is_empty() {
        return Err(Error::NoIndex);
    }
    let dim = snap.dimension();
    let k = table.len();
    let qs = centroid_space(snap, queries);
    let m = qs.len() / dim;
    let mut dists = vec![0.0f32; m * k];
    let mut scratch = BlockScratch::default();
    let mut tmp = Vec::new();
    for start in (0..k).step_by(BLOCK_ROWS) {
        let end = (start + BLOCK_ROWS).min(k);
        let w = end - start;
        let block = &table.data[start * dim..end * dim];
        for q0 in (0..m).step_by(QUERY_BLOCK) {
            let q1 = (q0 + QUERY_BLOCK).min(m);
            tmp.resize((q1 - q0) * w, 0.0);
            BlockKernel::SquaredL2.compute(&qs[q0 * dim..q1 * dim], block, dim, &mut scratch, &mut tmp)?;
            for i in q0..q1 {
                let src = &tmp[(i - q0) * w..(i - q0 + 1) * w];
                dists[i * k + start..i * k + end].copy_from_slice(src);
            }
        }
    }
    let n = n.min(k);
    Ok((0..m)
        .map(|i| {
            let row = &dists[i * k..(i + 1) * k];
            let mut order: Vec<usize> = (0..k).collect();
            let cmp = |&a: &usize, &b: &usize| {
                row[a].total_cmp(&row[b]).then(table.ids[a].cmp(&table.ids[b]))
            };
            if n < k {
                order.select_nth_unstable_by(n, cmp);
                order.truncate(n);
            }
            order.sort_unstable_by(cmp);
            order.into_iter().map(|j| table.ids[j]).collect()
        })
        .collect())
}

pub fn find_nearest_centroids(snap: &Snapshot, q: &[f32], n: usize) -> Result<Vec<u32>> {
    check_query(snap, q)?;
    if n == 0 {
        return Err(Error::InvalidArgument("nprobe must be at least 1".into()));
    }
    Ok(nearest_centroids_many(snap, q, n)?.remove(0))
}

/// One partition and the queries that need it.
pub(crate) struct ScanJob {
    pub partition: u32,
    pub queries: Vec<usize>,
}

struct Acc {
    heaps: Vec<Option<TopKHeap<f32>>>,
    scanned: u64,
}

impl Acc {
    fn new(m: usize) -> Self {
        Self {
            heaps: (0..m).map(|_| None).collect(),
            scanned: 0,
        }
    }

    fn merge(mut self, other: Acc, k: usize) -> Acc {
        for (mine, theirs) in self.heaps.iter_mut().zip(other.heaps) {
            let Some(theirs) = theirs else { continue };
            match mine {
                None => *mine = Some(theirs),
                Some(h) => {
                    for hit in theirs.drain_unsorted() {
                        h.offer(hit);
                    }
                    debug_assert_eq!(h.capacity(), k);
                }
            }
        }
        self.scanned += other.scanned;
        self
    }
}

/// Scans every job once and returns per-query top-`k` plus the number of
/// (row, query group) visits. `keep` filters rows by asset before distances.
pub(crate) fn run_scan<F>(snap: &Snapshot, queries: &[f32], k: usize, jobs: &[ScanJob], keep: Option<&F>) -> Result<(Vec<ResultSet>, u64)>
where
    F: Fn(&str) -> bool + Sync,
{
    let dim = snap.dimension();
    let m = queries.len() / dim;
    let kernel = BlockKernel::for_metric(snap.metric());
    let acc = snap.pool.install(|| {
        jobs.par_iter()
            .try_fold(
                || Acc::new(m),
                |mut acc, job| {
                    scan_job(snap, queries, dim, k, kernel, job, keep, &mut acc)?;
                    Ok::<_, Error>(acc)
                },
            )
            .try_reduce(|| Acc::new(m), |a, b| Ok(a.merge(b, k)))
    })?;
    let results = acc
        .heaps
        .into_iter()
        .map(|h| h.map_or_else(Vec::new, TopKHeap::into_sorted_vec))
        .collect();
    Ok((results, acc.scanned))
}

#[allow(clippy::too_many_arguments)]
fn scan_job<F>(
    snap: &Snapshot,
    queries: &[f32],
    dim: usize,
    k: usize,
    kernel: BlockKernel,
    job: &ScanJob,
    keep: Option<&F>,
    acc: &mut Acc,
) -> Result<()>
where
    F: Fn(&str) -> bool + Sync,
{
    let state = &snap.state;
    let mut scratch = BlockScratch::default();
    let mut out = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut packed: Vec<f32> = Vec::new();
    let groups: Vec<(Vec<usize>, Vec<f32>)> = job
        .queries
        .chunks(QUERY_BLOCK)
        .map(|g| {
            let mut q = Vec::with_capacity(g.len() * dim);
            for &i in g {
                q.extend_from_slice(&queries[i * dim..(i + 1) * dim]);
            }
            (g.to_vec(), q)
        })
        .collect();
    for &i in &job.queries {
        acc.heaps[i].get_or_insert_with(|| TopKHeap::new(k));
    }
    for seg_ref in state.segments(job.partition) {
        let seg = state.read_segment(seg_ref, true)?;
        let n = seg.len();
        let emb: &[f32] = match keep {
            None => {
                rows.clear();
                rows.extend(0..n);
                &seg.embeddings
            }
            Some(f) => {
                rows.clear();
                rows.extend((0..n).filter(|&r| f(&seg.assets[r])));
                if rows.is_empty() {
                    continue;
                }
                packed.clear();
                for &r in &rows {
                    packed.extend_from_slice(&seg.embeddings[r * dim..(r + 1) * dim]);
                }
                &packed
            }
        };
        let total = rows.len();
        for start in (0..total).step_by(BLOCK_ROWS) {
            let end = (start + BLOCK_ROWS).min(total);
            let w = end - start;
            let block = &emb[start * dim..end * dim];
            for (members, q) in &groups {
                out.resize(members.len() * w, 0.0);
                kernel.compute(q, block, dim, &mut scratch, &mut out)?;
                acc.scanned += w as u64;
                for (gi, &qi) in members.iter().enumerate() {
                    let heap = acc.heaps[qi].as_mut().expect("heap initialised");
                    for (j, &d) in out[gi * w..(gi + 1) * w].iter().enumerate() {
                        let r = rows[start + j];
                        let id = seg.ids[r];
                        if heap.accepts(d, id) {
                            heap.offer(Neighbor {
                                asset_id: seg.assets[r].clone(),
                                vector_id: id,
                                distance: d,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

type NoFilter = fn(&str) -> bool;

/// Every partition, DELTA included.
pub(crate) fn all_partitions(snap: &Snapshot) -> Vec<u32> {
    snap.partition_ids()
}

/// Probed partitions followed by DELTA.
pub(crate) fn with_delta(mut parts: Vec<u32>) -> Vec<u32> {
    if !parts.contains(&DELTA) {
        parts.push(DELTA);
    }
    parts
}

pub(crate) fn scan_single<F>(snap: &Snapshot, q: &[f32], k: usize, parts: &[u32], keep: Option<&F>) -> Result<(ResultSet, u64)>
where
    F: Fn(&str) -> bool + Sync,
{
    let jobs: Vec<ScanJob> = parts
        .iter()
        .filter(|&&p| snap.partition_size(p) > 0)
        .map(|&p| ScanJob {
            partition: p,
            queries: vec![0],
        })
        .collect();
    let (mut res, scanned) = run_scan(snap, q, k, &jobs, keep)?;
    Ok((res.pop().unwrap_or_default(), scanned))
}

/// Exhaustive top-`k` over every stored vector.
pub fn knn_exact(snap: &Snapshot, q: &[f32], k: usize) -> Result<ResultSet> {
    knn_exact_traced(snap, q, k).map(|r| r.0)
}

pub fn knn_exact_traced(snap: &Snapshot, q: &[f32], k: usize) -> Result<(ResultSet, ScanTrace)> {
    check_query(snap, q)?;
    check_k(k)?;
    let parts = all_partitions(snap);
    let (hits, scanned) = scan_single::<NoFilter>(snap, q, k, &parts, None)?;
    Ok((
        hits,
        ScanTrace {
            nprobe: 0,
            partitions: parts,
            vectors_scanned: scanned,
        },
    ))
}

/// Partitions a request visits, DELTA included. `None` without an index.
pub(crate) fn probe_plan(snap: &Snapshot, q: &[f32], nprobe: Nprobe) -> Result<Option<(usize, Vec<u32>)>> {
    if snap.centroid_count() == 0 {
        return Ok(None);
    }
    let n = resolve_nprobe(snap, nprobe)?;
    let parts = nearest_centroids_many(snap, q, n)?.remove(0);
    Ok(Some((n, with_delta(parts))))
}

/// Scans the `nprobe` nearest partitions plus DELTA. Falls back to an exact
/// scan when no index has been built.
pub fn ann_search(snap: &Snapshot, req: &SearchRequest) -> Result<ResultSet> {
    ann_search_traced(snap, req).map(|r| r.0)
}

pub fn ann_search_traced(snap: &Snapshot, req: &SearchRequest) -> Result<(ResultSet, ScanTrace)> {
    check_query(snap, &req.query)?;
    check_k(req.k)?;
    let Some((n, parts)) = probe_plan(snap, &req.query, req.nprobe)? else {
        return knn_exact_traced(snap, &req.query, req.k);
    };
    let (hits, scanned) = scan_single::<NoFilter>(snap, &req.query, req.k, &parts, None)?;
    Ok((
        hits,
        ScanTrace {
            nprobe: n,
            partitions: parts,
            vectors_scanned: scanned,
        },
    ))
}

/// Fraction of the exact top-`k` found by `approx`, by vector id. The
/// denominator is `min(k, |exact|)` so short result sets can still reach 1.
pub fn recall_at_k(approx: &[Neighbor<f32>], exact: &[Neighbor<f32>], k: usize) -> f64 {
    let truth: HashSet<u64> = exact.iter().take(k).map(|h| h.vector_id).collect();
    if truth.is_empty() {
        return 1.0;
    }
    let found = approx.iter().take(k).filter(|h| truth.contains(&h.vector_id)).count();
    found as f64 / truth.len() as f64
}

/// Strict (distance, vector id) ordering check.
pub fn is_ranked(hits: &[Neighbor<f32>]) -> bool {
    hits.windows(2).all(|w| {
        w[0].distance
            .total_cmp(&w[1].distance)
            .then(w[0].vector_id.cmp(&w[1].vector_id))
            == Ordering::Less
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::distance;
    use crate::storage::{CentroidRecord, Database, DbConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(n: usize, dim: usize, metric: Metric, seed: u64) -> (tempfile::TempDir, Database, Vec<Vec<f32>>) {
        let dir = tempfile::tempdir().unwrap();
        let db = Database::open(dir.path().join("s.mvec"), DbConfig::new(dim).metric(metric).sync(false)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f32>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut t = db.begin_write().unwrap();
        for (i, v) in data.iter().enumerate() {
            t.upsert_vectors(&format!("v{i}"), &[v], None).unwrap();
        }
        t.commit().unwrap();
        (dir, db, data)
    }

    fn oracle(snap: &Snapshot, q: &[f32], k: usize) -> Vec<(f32, u64)> {
        let mut all = Vec::new();
        for p in snap.partition_ids() {
            for r in snap.scan_partition(p) {
                let r = r.unwrap();
                all.push((distance(q, &r.embedding, snap.metric()).unwrap(), r.vector_id));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    fn keys(r: &ResultSet) -> Vec<(f32, u64)> {
        r.iter().map(|h| (h.distance, h.vector_id)).collect()
    }

    /// Random centroids and a nearest assignment, committed directly.
    fn index(db: &Database, k: usize, seed: u64) {
        let snap = db.snapshot();
        let dim = snap.dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cents: Vec<CentroidRecord> = (0..k as u32)
            .map(|p| CentroidRecord {
                partition_id: p,
                centroid: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let mut t = db.begin_write().unwrap();
        t.put_centroids(&cents).unwrap();
        let mut moves = Vec::new();
        for r in snap.scan_partition(DELTA) {
            let r = r.unwrap();
            let q = centroid_space(&snap, &r.embedding);
            let best = cents
                .iter()
                .min_by(|a, b| {
                    distance(&q, &a.centroid, Metric::SquaredL2)
                        .unwrap()
                        .total_cmp(&distance(&q, &b.centroid, Metric::SquaredL2).unwrap())
                })
                .unwrap();
            moves.push((r.vector_id, best.partition_id));
        }
        t.update_assignments(moves).unwrap();
        t.commit().unwrap();
    }

    #[test]
    fn single_vector_and_short_results() {
        let (_d, db, data) = store(5, 3, Metric::SquaredL2, 1);
        let s = db.snapshot();
        let r = knn_exact(&s, &data[2], 1).unwrap();
        assert_eq!(&*r[0].asset_id, "v2");
        assert_eq!(r[0].distance, 0.0);
        let r = knn_exact(&s, &data[0], 50).unwrap();
        assert_eq!(r.len(), 5);
        assert!(is_ranked(&r));
        assert!(matches!(knn_exact(&s, &[0.0; 2], 1), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(knn_exact(&s, &data[0], 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(find_nearest_centroids(&s, &data[0], 1), Err(Error::NoIndex)));
    }

    #[test]
    fn exact_matches_scalar_oracle() {
        for metric in [Metric::SquaredL2, Metric::Cosine] {
            let (_d, db, _) = store(1000, 16, metric, 2);
            let s = db.snapshot();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..10 {
                let q: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert_eq!(keys(&knn_exact(&s, &q, 37).unwrap()), oracle(&s, &q, 37));
            }
        }
    }

    #[test]
    fn nearest_centroids_match_sort_oracle() {
        let (_d, db, _) = store(300, 8, Metric::SquaredL2, 3);
        index(&db, 100, 4);
        let s = db.snapshot();
        let cents = s.scan_centroids();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut want: Vec<(f32, u32)> = cents
                .iter()
                .map(|c| (distance(&q, &c.centroid, Metric::SquaredL2).unwrap(), c.partition_id))
                .collect();
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<u32> = want.iter().take(10).map(|w| w.1).collect();
            assert_eq!(find_nearest_centroids(&s, &q, 10).unwrap(), want);
        }
        let c = &cents[17];
        assert_eq!(find_nearest_centroids(&s, &c.centroid, 1).unwrap(), vec![c.partition_id]);
        assert_eq!(find_nearest_centroids(&s, &c.centroid, 500).unwrap().len(), 100);
    }

    #[test]
    fn exhaustive_probe_equals_exact_and_workers_agree() {
        for metric in [Metric::SquaredL2, Metric::Cosine] {
            let (_d, db, _) = store(800, 12, metric, 6);
            index(&db, 20, 7);
            let s = db.snapshot();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for _ in 0..10 {
                let q: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let exact = knn_exact(&s, &q, 25).unwrap();
                let ann = ann_search(&s, &SearchRequest::new(q.clone(), 25, 20)).unwrap();
                assert_eq!(ann, exact);
                for w in [2, 8] {
                    let sw = s.with_workers(w).unwrap();
                    assert_eq!(ann_search(&sw, &SearchRequest::new(q.clone(), 25, 3)).unwrap(),
                        ann_search(&s, &SearchRequest::new(q.clone(), 25, 3)).unwrap());
                }
                let approx = ann_search(&s, &SearchRequest::new(q.clone(), 25, 2)).unwrap();
                for h in &approx {
                    let v = s.get_vector(h.vector_id).unwrap().unwrap();
                    assert!((distance(&q, &v.embedding, metric).unwrap() - h.distance).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn delta_always_scanned() {
        let (_d, db, _) = store(400, 6, Metric::SquaredL2, 10);
        index(&db, 8, 11);
        let fresh = vec![9.0f32; 6];
        let mut t = db.begin_write().unwrap();
        t.upsert_vectors("fresh", &[&fresh], None).unwrap();
        t.commit().unwrap();
        let s = db.snapshot();
        let (r, trace) = ann_search_traced(&s, &SearchRequest::new(fresh, 5, 1)).unwrap();
        assert_eq!(&*r[0].asset_id, "fresh");
        assert_eq!(trace.partitions.len(), 2);
        assert_eq!(*trace.partitions.last().unwrap(), DELTA);
    }

    #[test]
    fn scanned_volume_monotone_in_nprobe() {
        let (_d, db, _) = store(600, 6, Metric::SquaredL2, 12);
        index(&db, 30, 13);
        let s = db.snapshot();
        let q = vec![0.1f32; 6];
        let mut last = 0;
        for n in 1..=30 {
            let (_, t) = ann_search_traced(&s, &SearchRequest::new(q.clone(), 10, n)).unwrap();
            assert!(t.vectors_scanned >= last);
            last = t.vectors_scanned;
        }
        assert_eq!(last, 600);
    }

    #[test]
    fn recall_counting() {
        let hit = |id| Neighbor {
            asset_id: "a".into(),
            vector_id: id,
            distance: id as f32,
        };
        let exact: ResultSet = (0..10).map(hit).collect();
        let half: ResultSet = (5..15).map(hit).collect();
        let none: ResultSet = (20..30).map(hit).collect();
        assert_eq!(recall_at_k(&exact, &exact, 10), 1.0);
        assert_eq!(recall_at_k(&none, &exact, 10), 0.0);
        assert_eq!(recall_at_k(&half, &exact, 10), 0.5);
    }

    #[test]
    fn auto_nprobe_tracks_budget() {
        let (_d, db, _) = store(400, 4, Metric::SquaredL2, 14);
        index(&db, 10, 15);
        let mut t = db.begin_write().unwrap();
        let mut meta = t.index_meta();
        meta.built = true;
        meta.baseline_avg = 40.0;
        meta.base_nprobe = 3;
        meta.target_scanned = 120.0;
        t.set_index_meta(meta);
        t.commit().unwrap();
        let s = db.snapshot();
        assert_eq!(resolve_nprobe(&s, Nprobe::Auto).unwrap(), 3);
        assert_eq!(resolve_nprobe(&s, Nprobe::Fixed(7)).unwrap(), 7);
        assert!(resolve_nprobe(&s, Nprobe::Fixed(0)).is_err());
        assert_eq!("auto".parse::<Nprobe>().unwrap(), Nprobe::Auto);
    }
}
