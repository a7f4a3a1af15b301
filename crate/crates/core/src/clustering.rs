//! Memory-bounded balanced mini-batch k-means.
//!
//! Training never holds the dataset: the partition stream is read in short
//! row chunks straight from disk, and each mini-batch fetches only its `s`
//! sampled rows. [`Residency`] counts how many dataset vectors are held at
//! once so the bound can be asserted.

use std::collections::BinaryHeap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{BlockKernel, BlockScratch, BLOCK_ROWS};
use crate::scalar::Scalar;
use crate::storage::format::SegmentRef;
use crate::storage::{CentroidRecord, Database, Snapshot, WriteTxn};
use crate::{Error, Result};

/// Rows per streamed chunk.
pub const STREAM_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    /// Target vectors per partition, `t`.
    pub target_size: usize,
    /// Mini-batch size `s`; `None` means `min(10 k, N)`.
    pub minibatch: Option<usize>,
    pub iterations: usize,
    /// Balance penalty weight; 0 gives plain mini-batch k-means.
    pub balance: f64,
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            target_size: 100,
            minibatch: None,
            iterations: 30,
            balance: 1.0,
            seed: 0,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::InvalidArgument("target cluster size must be at least 1".into()));
        }
        if self.minibatch == Some(0) {
            return Err(Error::InvalidArgument("mini-batch size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if !(self.balance >= 0.0 && self.balance.is_finite()) {
            return Err(Error::InvalidArgument("balance weight must be a finite non-negative number".into()));
        }
        Ok(())
    }

    pub fn cluster_count(&self, n: usize) -> usize {
        cluster_count(n, self.target_size)
    }

    pub fn minibatch_size(&self, n: usize) -> usize {
        let k = self.cluster_count(n);
        self.minibatch.unwrap_or(10 * k).min(n).max(1)
    }
}

/// `max(1, floor(n / t))`.
pub fn cluster_count(n: usize, t: usize) -> usize {
    (n / t.max(1)).max(1)
}

/// Peak tracker for dataset vectors held in memory.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Residency {
    current: usize,
    peak: usize,
}

impl Residency {
    pub fn acquire(&mut self, n: usize) {
        self.current += n;
        self.peak = self.peak.max(self.current);
    }

    pub fn release(&mut self, n: usize) {
        self.current -= n;
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

/// Centroids `C`, per-centroid sample counts `v`, and the cached
/// assignments `d` of the current mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringState<S> {
    pub dim: usize,
    pub centroids: Vec<S>,
    pub counts: Vec<u64>,
    pub assignments: Vec<usize>,
    scale_sum: f64,
    scale_n: u64,
}

impl<S: Scalar> ClusteringState<S> {
    pub fn new(centroids: Vec<S>, dim: usize) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::InvalidArgument("centroid matrix must be a non-empty k x D block".into()));
        }
        let k = centroids.len() / dim;
        Ok(Self {
            dim,
            centroids,
            counts: vec![0; k],
            assignments: Vec::new(),
            scale_sum: 0.0,
            scale_n: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn centroid(&self, c: usize) -> &[S] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Running mean of the unpenalized nearest distances seen so far.
    pub fn distance_scale(&self) -> f64 {
        if self.scale_n == 0 {
            0.0
        } else {
            self.scale_sum / self.scale_n as f64
        }
    }

    /// Penalized argmin over one row of distances to every centroid.
    fn pick(&mut self, dists: &[S], balance: f64, t: usize) -> usize {
        let mut nearest = S::infinity();
        for &d in dists {
            if d < nearest {
                nearest = d;
            }
        }
        self.scale_sum += nearest.to_f64_lossy();
        self.scale_n += 1;
        if balance == 0.0 {
            return argmin(dists);
        }
        let scale = self.distance_scale();
        let t = t as f64;
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for (c, &d) in dists.iter().enumerate() {
            let over = (self.counts[c] as f64 - t).max(0.0);
            let cost = d.to_f64_lossy() + balance * over / t * scale;
            if cost < best_cost {
                best_cost = cost;
                best = c;
            }
        }
        best
    }

    /// Nearest centroid under the balance penalty, ties to the lower index.
    pub fn nearest_balanced(&mut self, x: &[S], balance: f64, t: usize) -> usize {
        let dists: Vec<S> = (0..self.k()).map(|c| sq_l2(x, self.centroid(c))).collect();
        self.pick(&dists, balance, t)
    }

    /// Unpenalized nearest centroid, ties to the lower index.
    pub fn nearest(&self, x: &[S]) -> usize {
        let dists: Vec<S> = (0..self.k()).map(|c| sq_l2(x, self.centroid(c))).collect();
        argmin(&dists)
    }

    /// Caches `nearest_balanced` for every batch row, then applies the
    /// per-centroid learning-rate updates in batch order.
    pub fn minibatch_step(&mut self, batch: &[S], balance: f64, t: usize) -> Result<()> {
        let dim = self.dim;
        if batch.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: batch.len() % dim,
            });
        }
        let m = batch.len() / dim;
        let mut assignments = Vec::with_capacity(m);
        let mut dists = Vec::new();
        let mut scratch = BlockScratch::default();
        for q0 in (0..m).step_by(BLOCK_ROWS) {
            let q1 = (q0 + BLOCK_ROWS).min(m);
            block_distances(&batch[q0 * dim..q1 * dim], &self.centroids, dim, &mut scratch, &mut dists)?;
            let k = self.k();
            for i in 0..q1 - q0 {
                let c = self.pick(&dists[i * k..(i + 1) * k], balance, t);
                assignments.push(c);
            }
        }
        for (i, &c) in assignments.iter().enumerate() {
            self.counts[c] += 1;
            let eta = S::one() / S::from_f64_lossy(self.counts[c] as f64);
            let keep = S::one() - eta;
            let x = &batch[i * dim..(i + 1) * dim];
            for (cj, &xj) in self.centroids[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *cj = keep * *cj + eta * xj;
            }
        }
        self.assignments = assignments;
        Ok(())
    }

    /// Unpenalized nearest centroid for each row.
    pub fn assign_rows(&self, rows: &[S]) -> Result<Vec<usize>> {
        let dim = self.dim;
        let k = self.k();
        let mut dists = Vec::new();
        let mut scratch = BlockScratch::default();
        block_distances(rows, &self.centroids, dim, &mut scratch, &mut dists)?;
        Ok(dists.chunks_exact(k).map(argmin).collect())
    }
}

fn sq_l2<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn argmin<S: Scalar>(d: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in d.iter().enumerate() {
        if x < d[best] {
            best = i;
        }
    }
    best
}

/// Row-major `m x k` squared L2 distances.
fn block_distances<S: Scalar>(rows: &[S], centroids: &[S], dim: usize, scratch: &mut BlockScratch<S>, out: &mut Vec<S>) -> Result<()> {
    let m = rows.len() / dim;
    let k = centroids.len() / dim;
    out.clear();
    out.resize(m * k, S::zero());
    let mut tmp = Vec::new();
    for c0 in (0..k).step_by(BLOCK_ROWS) {
        let c1 = (c0 + BLOCK_ROWS).min(k);
        let w = c1 - c0;
        tmp.resize(m * w, S::zero());
        BlockKernel::SquaredL2.compute(rows, &centroids[c0 * dim..c1 * dim], dim, scratch, &mut tmp)?;
        for i in 0..m {
            out[i * k + c0..i * k + c1].copy_from_slice(&tmp[i * w..(i + 1) * w]);
        }
    }
    Ok(())
}

fn mix(salt: u64, id: u64) -> u64 {
    let mut z = salt ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Streaming uniform sample of `k` rows without replacement, holding at most
/// `k` rows. Each row gets a salted hash of its id as priority and the `k`
/// smallest priorities are kept, so the sample does not depend on stream
/// order.
pub struct Reservoir<S> {
    k: usize,
    dim: usize,
    salt: u64,
    heap: BinaryHeap<(u64, u64, usize)>,
    slots: Vec<S>,
}

impl<S: Scalar> Reservoir<S> {
    pub fn new(k: usize, dim: usize, salt: u64) -> Self {
        Self {
            k,
            dim,
            salt,
            heap: BinaryHeap::with_capacity(k + 1),
            slots: Vec::with_capacity(k * dim),
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn offer(&mut self, id: u64, row: &[S]) {
        debug_assert_eq!(row.len(), self.dim);
        let key = (mix(self.salt, id), id);
        let dim = self.dim;
        if self.heap.len() < self.k {
            let slot = self.heap.len();
            self.slots.extend_from_slice(row);
            self.heap.push((key.0, key.1, slot));
        } else if let Some(&(top, top_id, slot)) = self.heap.peek() {
            if key < (top, top_id) {
                self.heap.pop();
                self.slots[slot * dim..(slot + 1) * dim].copy_from_slice(row);
                self.heap.push((key.0, key.1, slot));
            }
        }
    }

    /// Sampled rows in priority order.
    pub fn finish(self) -> Vec<S> {
        let dim = self.dim;
        let mut out = Vec::with_capacity(self.slots.len());
        for (_, _, slot) in self.heap.into_sorted_vec() {
            out.extend_from_slice(&self.slots[slot * dim..(slot + 1) * dim]);
        }
        out
    }
}

/// Position of one stored row.
#[derive(Debug, Clone, Copy)]
struct RowRef {
    seg: SegmentRef,
    row: u32,
    id: u64,
}

/// Stream-ordered directory of every row in a snapshot: partitions ascending,
/// segments by offset, rows in order. Holds ids only.
struct Directory {
    rows: Vec<RowRef>,
    /// Row positions sorted by vector id.
    by_id: Vec<usize>,
}

impl Directory {
    fn build(snap: &Snapshot) -> Result<Self> {
        let state = &snap.state;
        let mut rows = Vec::with_capacity(snap.vector_count() as usize);
        for p in snap.partition_ids() {
            for seg in state.segments(p) {
                let prefix = state.file.segment_prefix(seg)?;
                for (r, &id) in prefix.ids.iter().enumerate() {
                    rows.push(RowRef {
                        seg: *seg,
                        row: r as u32,
                        id,
                    });
                }
            }
        }
        let mut by_id: Vec<usize> = (0..rows.len()).collect();
        by_id.sort_unstable_by_key(|&i| rows[i].id);
        Ok(Self { rows, by_id })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn fetch(&self, snap: &Snapshot, i: usize, out: &mut Vec<f32>) -> Result<()> {
        let r = &self.rows[i];
        snap.state.file.row(&r.seg, r.row, out)
    }

    /// Contiguous runs of at most `STREAM_CHUNK` rows within one segment.
    fn chunks(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let mut start = 0;
        std::iter::from_fn(move || {
            if start >= self.rows.len() {
                return None;
            }
            let seg = self.rows[start].seg.block.offset;
            let mut end = start + 1;
            while end < self.rows.len() && end - start < STREAM_CHUNK && self.rows[end].seg.block.offset == seg {
                end += 1;
            }
            let r = start..end;
            start = end;
            Some(r)
        })
    }

    fn read_chunk(&self, snap: &Snapshot, r: &std::ops::Range<usize>, out: &mut Vec<f32>) -> Result<()> {
        let first = &self.rows[r.start];
        snap.state.file.rows(&first.seg, first.row, r.len() as u32, out)
    }
}

/// Outcome of one clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub vectors: usize,
    pub k: usize,
    pub minibatch: usize,
    pub iterations: usize,
    /// Most dataset vectors held at once.
    pub peak_resident: usize,
    pub reseeded: usize,
    pub vectors_moved: usize,
    pub min_partition: usize,
    pub max_partition: usize,
}

/// Trained centroids and final assignments, not yet written.
pub struct Trained {
    pub state: ClusteringState<f32>,
    /// `(vector_id, partition_id)` ascending by vector id.
    pub assignments: Vec<(u64, u32)>,
    pub sizes: Vec<usize>,
    pub residency: Residency,
    pub reseeded: usize,
    pub minibatch: usize,
}

/// Runs initialisation, `iterations` mini-batch steps and the final
/// assignment over every vector of `snap`.
pub fn train(snap: &Snapshot, cfg: &ClusteringConfig) -> Result<Trained> {
    cfg.validate()?;
    let dim = snap.dimension();
    let dir = Directory::build(snap)?;
    let n = dir.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let k = cfg.cluster_count(n);
    let s = cfg.minibatch_size(n);
    let t = cfg.target_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut residency = Residency::default();

    // Reservoir initialisation over the streamed dataset.
    let mut reservoir = Reservoir::new(k, dim, rng.gen());
    residency.acquire(k);
    let mut buf = Vec::new();
    for r in dir.chunks() {
        residency.acquire(r.len());
        dir.read_chunk(snap, &r, &mut buf)?;
        for (row, meta) in buf.chunks_exact(dim).zip(&dir.rows[r.clone()]) {
            reservoir.offer(meta.id, row);
        }
        residency.release(r.len());
    }
    let mut state = ClusteringState::new(reservoir.finish(), dim)?;
    residency.release(k);

    let mut batch = Vec::with_capacity(s * dim);
    let mut row = Vec::with_capacity(dim);
    for _ in 0..cfg.iterations {
        let picks = index::sample(&mut rng, n, s);
        batch.clear();
        residency.acquire(s);
        for i in picks.iter() {
            dir.fetch(snap, dir.by_id[i], &mut row)?;
            batch.extend_from_slice(&row);
        }
        state.minibatch_step(&batch, cfg.balance, t)?;
        residency.release(s);
    }
    batch = Vec::new();
    drop(batch);

    // Final unpenalized assignment, streamed.
    let mut assign: Vec<u32> = Vec::with_capacity(n);
    for r in dir.chunks() {
        residency.acquire(r.len());
        dir.read_chunk(snap, &r, &mut buf)?;
        assign.extend(state.assign_rows(&buf)?.into_iter().map(|c| c as u32));
        residency.release(r.len());
    }
    let mut sizes = vec![0usize; k];
    for &c in &assign {
        sizes[c as usize] += 1;
    }

    // Re-seed empty clusters from the largest partition.
    let mut reseeded = 0;
    for c in 0..k {
        if sizes[c] != 0 {
            continue;
        }
        let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
        if sizes[largest] < 2 {
            break;
        }
        let members: Vec<usize> = dir.by_id.iter().copied().filter(|&i| assign[i] as usize == largest).collect();
        let pick = members[rng.gen_range(0..members.len())];
        residency.acquire(1);
        dir.fetch(snap, pick, &mut row)?;
        state.centroids[c * dim..(c + 1) * dim].copy_from_slice(&row);
        residency.release(1);
        for i in members {
            residency.acquire(1);
            dir.fetch(snap, i, &mut row)?;
            let to = state.nearest(&row);
            residency.release(1);
            sizes[assign[i] as usize] -= 1;
            sizes[to] += 1;
            assign[i] = to as u32;
        }
        reseeded += 1;
    }

    let assignments = dir.by_id.iter().map(|&i| (dir.rows[i].id, assign[i])).collect();
    Ok(Trained {
        state,
        assignments,
        sizes,
        residency,
        reseeded,
        minibatch: s,
    })
}

/// Writes trained centroids (ids `0..k`) and assignments into `txn`.
pub fn apply(txn: &mut WriteTxn<'_>, trained: &Trained) -> Result<usize> {
    let dim = trained.state.dim;
    let records: Vec<CentroidRecord> = (0..trained.state.k())
        .map(|c| CentroidRecord {
            partition_id: c as u32,
            centroid: trained.state.centroids[c * dim..(c + 1) * dim].to_vec(),
        })
        .collect();
    txn.put_centroids(&records)?;
    txn.update_assignments(trained.assignments.iter().copied())
}

fn report(trained: &Trained, cfg: &ClusteringConfig, moved: usize) -> ClusterReport {
    ClusterReport {
        vectors: trained.assignments.len(),
        k: trained.state.k(),
        minibatch: trained.minibatch,
        iterations: cfg.iterations,
        peak_resident: trained.residency.peak(),
        reseeded: trained.reseeded,
        vectors_moved: moved,
        min_partition: trained.sizes.iter().copied().min().unwrap_or(0),
        max_partition: trained.sizes.iter().copied().max().unwrap_or(0),
    }
}

/// Clusters the committed state seen by `txn` and stages the result in it.
/// `txn` must not hold uncommitted vector changes.
pub fn cluster_txn(txn: &mut WriteTxn<'_>, cfg: &ClusteringConfig) -> Result<ClusterReport> {
    let snap = txn.base_snapshot();
    let trained = train(&snap, cfg)?;
    let moved = apply(txn, &trained)?;
    txn.refresh_stats();
    Ok(report(&trained, cfg, moved))
}

/// Re-clusters every vector and commits centroids plus assignments at once.
pub fn cluster(db: &Database, cfg: &ClusteringConfig) -> Result<ClusterReport> {
    let mut txn = db.begin_write()?;
    let report = cluster_txn(&mut txn, cfg)?;
    txn.commit()?;
    Ok(report)
}
