//! The single write transaction.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use parking_lot::MutexGuard;

use super::attributes::{AttributeRecord, Schema};
use super::format::{self, BlockKind, BlockRef, Header, SegmentRef, SegmentRows};
use super::journal::{self, CommitRecord};
use super::state::{AttrChange, CentroidTable, IndexMeta, State, VectorLoc};
use super::{CentroidRecord, Database, KillPoint, Snapshot, VectorRecord, DELTA};
use crate::hybrid::ColumnStats;
use crate::kernel::{normalize, Metric};
use crate::{Error, Result};

/// Counters for one transaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxnCounters {
    pub vectors_inserted: u64,
    pub vectors_deleted: u64,
    /// Vectors whose partition changed through `update_assignments`.
    pub vectors_moved: u64,
    /// Centroid rows replaced or added.
    pub centroids_written: u64,
    pub segments_written: u64,
    pub bytes_appended: u64,
}

/// Outcome of a successful commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitInfo {
    pub version: u64,
    pub counters: TxnCounters,
}

struct Pending {
    ids: Vec<u64>,
    assets: Vec<Arc<str>>,
    embeddings: Vec<f32>,
}

/// Accumulates mutations until [`WriteTxn::commit`]. Dropping without
/// committing rolls back.
pub struct WriteTxn<'db> {
    db: &'db Database,
    _guard: MutexGuard<'db, ()>,
    base: Arc<State>,
    work: State,
    cursor: u64,
    hasher: crc32fast::Hasher,
    pending: Pending,
    /// Deleted rows still present in stored segments, by segment offset.
    deferred: HashMap<u64, HashSet<u64>>,
    attr_changes: BTreeMap<Arc<str>, Option<Arc<AttributeRecord>>>,
    touched: BTreeSet<u32>,
    centroids_dirty: bool,
    meta_dirty: bool,
    counters: TxnCounters,
    poisoned: bool,
}

impl<'db> WriteTxn<'db> {
    pub(crate) fn new(db: &'db Database, guard: MutexGuard<'db, ()>, base: Arc<State>) -> Self {
        let work = (*base).clone();
        Self {
            db,
            _guard: guard,
            cursor: base.end,
            base,
            work,
            hasher: crc32fast::Hasher::new(),
            pending: Pending {
                ids: Vec::new(),
                assets: Vec::new(),
                embeddings: Vec::new(),
            },
            deferred: HashMap::new(),
            attr_changes: BTreeMap::new(),
            touched: BTreeSet::new(),
            centroids_dirty: false,
            meta_dirty: false,
            counters: TxnCounters::default(),
            poisoned: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.poisoned {
            return Err(Error::TxnFinished);
        }
        if self.db.is_crashed() {
            return Err(Error::Crashed);
        }
        Ok(())
    }

    fn guarded<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.check()?;
        let out = f(self);
        if let Err(e) = &out {
            if !e.is_validation() {
                self.poisoned = true;
            }
        }
        out
    }

    pub fn dimension(&self) -> usize {
        self.work.dim
    }

    pub fn metric(&self) -> Metric {
        self.work.metric
    }

    pub fn counters(&self) -> TxnCounters {
        self.counters
    }

    /// Snapshot of the committed state this transaction started from.
    pub fn base_snapshot(&self) -> Snapshot {
        self.db.snapshot_of(self.base.clone())
    }

    pub fn vector_count(&self) -> u64 {
        self.work.vector_count() + self.pending.ids.len() as u64
    }

    pub fn delta_count(&self) -> u64 {
        self.work.delta_count() + self.pending.ids.len() as u64
    }

    pub fn partition_size(&self, id: u32) -> u64 {
        if id == DELTA {
            self.delta_count()
        } else {
            self.work.partition_count(id)
        }
    }

    pub fn centroids(&self) -> Vec<CentroidRecord> {
        self.work.centroid_records()
    }

    pub fn index_meta(&self) -> IndexMeta {
        self.work.index.clone()
    }

    pub fn set_index_meta(&mut self, meta: IndexMeta) {
        self.work.index = meta;
        self.meta_dirty = true;
    }

    pub fn schema(&self) -> &Schema {
        &self.work.schema
    }

    /// Adds columns; a column redeclared with a different type is an error.
    pub fn extend_schema(&mut self, schema: &Schema) -> Result<()> {
        self.check()?;
        let merged = self.work.schema.merged(schema)?;
        if merged != self.work.schema {
            self.work.attributes.ensure_columns(&merged);
            self.work.schema = merged;
            self.meta_dirty = true;
        }
        Ok(())
    }

    /// Recomputes attribute statistics for the state being committed.
    pub fn refresh_stats(&mut self) {
        let assets = self.work.assets.len();
        self.work.stats = Arc::new(ColumnStats::build(&self.work.attributes, &self.work.schema, assets));
    }

    fn prepare_embedding(&self, e: &[f32]) -> Result<Vec<f32>> {
        if e.len() != self.work.dim {
            return Err(Error::DimensionMismatch {
                expected: self.work.dim,
                actual: e.len(),
            });
        }
        if let Some(i) = e.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut v = e.to_vec();
        if self.work.metric == Metric::Cosine {
            normalize(&mut v)?;
        }
        Ok(v)
    }

    /// Replaces every vector of `asset_id` with `embeddings`, staged in the
    /// delta partition. Attributes are replaced when given.
    pub fn upsert_vectors<E: AsRef<[f32]>>(
        &mut self,
        asset_id: &str,
        embeddings: &[E],
        attrs: Option<&AttributeRecord>,
    ) -> Result<usize> {
        self.check()?;
        if asset_id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument("asset id longer than 65535 bytes".into()));
        }
        let prepared = embeddings
            .iter()
            .map(|e| self.prepare_embedding(e.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let record = attrs.map(|a| a.validated(&self.work.schema)).transpose()?;
        self.guarded(|t| {
            let asset: Arc<str> = match t.work.assets.get_key_value(asset_id) {
                Some((k, _)) => k.clone(),
                None => Arc::from(asset_id),
            };
            t.remove_vectors(&asset);
            let mut ids = Vec::with_capacity(prepared.len());
            for v in prepared {
                let id = t.work.next_vector_id;
                t.work.next_vector_id += 1;
                ids.push(id);
                t.pending.ids.push(id);
                t.pending.assets.push(asset.clone());
                t.pending.embeddings.extend_from_slice(&v);
                if t.pending.ids.len() >= t.db.segment_capacity() {
                    t.spill_pending()?;
                }
            }
            t.counters.vectors_inserted += ids.len() as u64;
            let n = ids.len();
            if n > 0 {
                t.work.assets.insert(asset.clone(), Arc::from(ids));
            }
            if let Some(r) = record {
                let r = Arc::new(r);
                t.work.attributes.put(&asset, r.clone());
                t.attr_changes.insert(asset, Some(r));
            }
            Ok(n)
        })
    }

    /// Removes every vector and the attribute row of `asset_id`.
    pub fn delete_asset(&mut self, asset_id: &str) -> Result<usize> {
        self.check()?;
        let asset: Arc<str> = match self.work.assets.get_key_value(asset_id) {
            Some((k, _)) => k.clone(),
            None => Arc::from(asset_id),
        };
        let n = self.remove_vectors(&asset);
        if self.work.attributes.remove(&asset) {
            self.attr_changes.insert(asset, None);
        }
        self.counters.vectors_deleted += n as u64;
        Ok(n)
    }

    fn remove_vectors(&mut self, asset: &Arc<str>) -> usize {
        let Some(ids) = self.work.assets.remove(asset) else {
            return 0;
        };
        let mut pending_hit = false;
        for &id in ids.iter() {
            match self.work.locations.remove(&id) {
                Some(loc) => {
                    self.deferred.entry(loc.segment).or_default().insert(id);
                    self.touched.insert(loc.partition);
                }
                None => pending_hit = true,
            }
        }
        if pending_hit {
            let dim = self.work.dim;
            let p = &mut self.pending;
            let mut keep = 0;
            for i in 0..p.ids.len() {
                if *p.assets[i] != **asset {
                    p.ids.swap(keep, i);
                    p.assets.swap(keep, i);
                    let (a, b) = (keep * dim, i * dim);
                    if a != b {
                        p.embeddings.copy_within(b..b + dim, a);
                    }
                    keep += 1;
                }
            }
            p.ids.truncate(keep);
            p.assets.truncate(keep);
            p.embeddings.truncate(keep * dim);
        }
        ids.len()
    }

    fn append(&mut self, bytes: &[u8]) -> Result<u64> {
        let at = self.cursor;
        self.work.file.write_at(at, bytes)?;
        self.hasher.update(bytes);
        self.cursor += bytes.len() as u64;
        self.counters.bytes_appended += bytes.len() as u64;
        Ok(at)
    }

    fn append_block(&mut self, block: &[u8]) -> Result<BlockRef> {
        let offset = self.append(block)?;
        Ok(BlockRef {
            offset,
            len: block.len() as u32,
        })
    }

    /// Writes one segment and registers its rows.
    fn write_segment(&mut self, partition: u32, ids: &[u64], assets: &[Arc<str>], emb: &[f32]) -> Result<()> {
        debug_assert!(!ids.is_empty());
        let (block, emb_rel) = format::encode_segment(&SegmentRows {
            partition,
            ids,
            assets,
            embeddings: emb,
        });
        let block_ref = self.append_block(&block)?;
        let seg = SegmentRef {
            block: block_ref,
            count: ids.len() as u32,
            emb_offset: block_ref.offset + emb_rel as u64,
        };
        for (row, (&id, asset)) in ids.iter().zip(assets).enumerate() {
            self.work.locations.insert(
                id,
                VectorLoc {
                    partition,
                    segment: block_ref.offset,
                    row: row as u32,
                    asset: asset.clone(),
                },
            );
        }
        let entry = self.work.partitions.entry(partition).or_default();
        entry.count += ids.len() as u64;
        Arc::make_mut(&mut entry.segments).push(seg);
        self.touched.insert(partition);
        self.counters.segments_written += 1;
        Ok(())
    }

    fn spill_pending(&mut self) -> Result<()> {
        if self.pending.ids.is_empty() {
            return Ok(());
        }
        let p = std::mem::replace(
            &mut self.pending,
            Pending {
                ids: Vec::new(),
                assets: Vec::new(),
                embeddings: Vec::new(),
            },
        );
        self.write_segment(DELTA, &p.ids, &p.assets, &p.embeddings)
    }

    /// Detaches a segment from its partition without touching locations.
    fn detach_segment(&mut self, partition: u32, offset: u64) -> Result<SegmentRef> {
        let file = self.work.file.clone();
        let entry = self
            .work
            .partitions
            .get_mut(&partition)
            .ok_or_else(|| file.corrupt(format!("missing partition {partition}")))?;
        let segs = Arc::make_mut(&mut entry.segments);
        let i = segs
            .binary_search_by_key(&offset, |s| s.block.offset)
            .map_err(|_| file.corrupt(format!("missing segment {offset}")))?;
        let seg = segs.remove(i);
        entry.count -= seg.count as u64;
        if entry.count == 0 {
            self.work.partitions.remove(&partition);
        }
        Ok(seg)
    }

    /// Rewrites a segment keeping only rows accepted by `keep`.
    fn rewrite_segment(&mut self, partition: u32, offset: u64, keep: impl Fn(u64) -> bool) -> Result<()> {
        let seg = self.detach_segment(partition, offset)?;
        let data = self.work.file.segment(&seg, false)?;
        let dim = self.work.dim;
        let mut ids = Vec::new();
        let mut assets = Vec::new();
        let mut emb = Vec::new();
        for r in 0..data.len() {
            if keep(data.ids[r]) {
                ids.push(data.ids[r]);
                assets.push(data.assets[r].clone());
                emb.extend_from_slice(&data.embeddings[r * dim..(r + 1) * dim]);
            }
        }
        if !ids.is_empty() {
            self.write_segment(partition, &ids, &assets, &emb)?;
        }
        Ok(())
    }

    /// Writes buffered delta rows and physically removes deleted rows.
    fn materialize(&mut self) -> Result<()> {
        self.spill_pending()?;
        let deferred = std::mem::take(&mut self.deferred);
        let mut order: Vec<_> = deferred.into_iter().collect();
        order.sort_by_key(|(off, _)| *off);
        for (offset, dead) in order {
            let partition = self
                .segment_owner(offset)
                .ok_or_else(|| self.work.file.corrupt(format!("missing segment {offset}")))?;
            self.rewrite_segment(partition, offset, |id| !dead.contains(&id))?;
        }
        Ok(())
    }

    fn segment_owner(&self, offset: u64) -> Option<u32> {
        self.work.partitions.iter().find_map(|(&pid, p)| {
            p.segments
                .binary_search_by_key(&offset, |s| s.block.offset)
                .ok()
                .map(|_| pid)
        })
    }

    /// Packs under-filled segments of partitions that have fragmented.
    fn merge_fragmented(&mut self) -> Result<()> {
        let cap = self.db.segment_capacity();
        let touched: Vec<u32> = self.touched.iter().copied().collect();
        for pid in touched {
            let Some(entry) = self.work.partitions.get(&pid) else {
                continue;
            };
            let allowed = (entry.count as usize).div_ceil(cap) + 4;
            if entry.segments.len() <= allowed {
                continue;
            }
            let small: Vec<SegmentRef> = entry
                .segments
                .iter()
                .filter(|s| (s.count as usize) < cap)
                .copied()
                .collect();
            if small.len() < 2 {
                continue;
            }
            let dim = self.work.dim;
            let mut ids = Vec::with_capacity(cap);
            let mut assets = Vec::with_capacity(cap);
            let mut emb = Vec::with_capacity(cap * dim);
            for seg in small {
                self.detach_segment(pid, seg.block.offset)?;
                let data = self.work.file.segment(&seg, false)?;
                for r in 0..data.len() {
                    ids.push(data.ids[r]);
                    assets.push(data.assets[r].clone());
                    emb.extend_from_slice(&data.embeddings[r * dim..(r + 1) * dim]);
                    if ids.len() == cap {
                        self.write_segment(pid, &ids, &assets, &emb)?;
                        ids.clear();
                        assets.clear();
                        emb.clear();
                    }
                }
            }
            if !ids.is_empty() {
                self.write_segment(pid, &ids, &assets, &emb)?;
            }
        }
        Ok(())
    }

    /// Stored records of one partition as seen inside this transaction.
    pub fn scan_partition(&mut self, partition: u32) -> Result<Vec<VectorRecord>> {
        self.guarded(|t| {
            t.materialize()?;
            Arc::new(t.work.clone()).scan_partition(partition).collect()
        })
    }

    /// Replaces the whole centroid table.
    pub fn put_centroids(&mut self, centroids: &[CentroidRecord]) -> Result<()> {
        self.check()?;
        let dim = self.work.dim;
        let mut rows: Vec<&CentroidRecord> = centroids.iter().collect();
        rows.sort_by_key(|c| c.partition_id);
        let mut table = CentroidTable {
            ids: Vec::with_capacity(rows.len()),
            data: Vec::with_capacity(rows.len() * dim),
        };
        for c in rows {
            if c.partition_id == DELTA {
                return Err(Error::InvalidArgument("centroid id equals the delta sentinel".into()));
            }
            if c.centroid.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.centroid.len(),
                });
            }
            if let Some(i) = c.centroid.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            if table.ids.last() == Some(&c.partition_id) {
                return Err(Error::InvalidArgument(format!("duplicate centroid id {}", c.partition_id)));
            }
            table.ids.push(c.partition_id);
            table.data.extend_from_slice(&c.centroid);
        }
        self.counters.centroids_written += table.ids.len() as u64;
        self.work.centroids = Arc::new(table);
        self.centroids_dirty = true;
        Ok(())
    }

    /// Replaces (or adds) a single centroid row.
    pub fn set_centroid(&mut self, id: u32, centroid: &[f32]) -> Result<()> {
        self.check()?;
        if id == DELTA {
            return Err(Error::InvalidArgument("centroid id equals the delta sentinel".into()));
        }
        let dim = self.work.dim;
        if centroid.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: centroid.len(),
            });
        }
        let table = Arc::make_mut(&mut self.work.centroids);
        match table.ids.binary_search(&id) {
            Ok(i) => table.data[i * dim..(i + 1) * dim].copy_from_slice(centroid),
            Err(i) => {
                table.ids.insert(i, id);
                let at = i * dim;
                table.data.splice(at..at, centroid.iter().copied());
            }
        }
        self.counters.centroids_written += 1;
        self.centroids_dirty = true;
        Ok(())
    }

    /// Moves vectors to new partitions, physically re-clustering them.
    /// Returns the number of vectors whose partition changed.
    pub fn update_assignments(&mut self, assignments: impl IntoIterator<Item = (u64, u32)>) -> Result<usize> {
        self.check()?;
        self.guarded(|t| t.materialize())?;
        let mut by_target: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for (id, target) in assignments {
            let loc = self.work.locations.get(&id).ok_or(Error::UnknownVector(id))?;
            if target != DELTA && self.work.centroids.position(target).is_none() {
                return Err(Error::UnknownPartition(target));
            }
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("vector {id} assigned twice")));
            }
            if loc.partition != target {
                by_target.entry(target).or_default().push(id);
            }
        }
        self.guarded(|t| t.apply_moves(by_target))
    }

    fn apply_moves(&mut self, by_target: BTreeMap<u32, Vec<u64>>) -> Result<usize> {
        let cap = self.db.segment_capacity();
        let dim = self.work.dim;
        // segment offset -> (partition, moved ids)
        let mut sources: BTreeMap<u64, (u32, HashSet<u64>)> = BTreeMap::new();
        let mut moved = 0usize;
        let mut row = Vec::with_capacity(dim);
        for (target, ids) in by_target {
            let mut out_ids = Vec::with_capacity(cap.min(ids.len()));
            let mut out_assets = Vec::with_capacity(cap.min(ids.len()));
            let mut out_emb = Vec::with_capacity(cap.min(ids.len()) * dim);
            for id in ids {
                let loc = self.work.locations.get(&id).cloned().ok_or(Error::UnknownVector(id))?;
                let seg = self.work.segment_ref(&loc)?;
                self.base_or_work_row(&seg, &loc, &mut row)?;
                sources
                    .entry(loc.segment)
                    .or_insert_with(|| (loc.partition, HashSet::new()))
                    .1
                    .insert(id);
                out_ids.push(id);
                out_assets.push(loc.asset.clone());
                out_emb.extend_from_slice(&row);
                if out_ids.len() == cap {
                    self.write_segment(target, &out_ids, &out_assets, &out_emb)?;
                    moved += out_ids.len();
                    out_ids.clear();
                    out_assets.clear();
                    out_emb.clear();
                }
            }
            if !out_ids.is_empty() {
                self.write_segment(target, &out_ids, &out_assets, &out_emb)?;
                moved += out_ids.len();
            }
        }
        for (offset, (partition, gone)) in sources {
            let seg = self.work.segment_ref(&VectorLoc {
                partition,
                segment: offset,
                row: 0,
                asset: Arc::from(""),
            })?;
            if gone.len() == seg.count as usize {
                self.detach_segment(partition, offset)?;
                self.touched.insert(partition);
            } else {
                self.rewrite_segment(partition, offset, |id| !gone.contains(&id))?;
            }
        }
        self.counters.vectors_moved += moved as u64;
        Ok(moved)
    }

    fn base_or_work_row(&self, seg: &SegmentRef, loc: &VectorLoc, out: &mut Vec<f32>) -> Result<()> {
        if let Some(s) = self.work.file.cached_segment(seg) {
            let r = loc.row as usize;
            let dim = self.work.dim;
            out.clear();
            out.extend_from_slice(&s.embeddings[r * dim..(r + 1) * dim]);
            return Ok(());
        }
        self.work.file.row(seg, loc.row, out)
    }

    fn is_empty_txn(&self) -> bool {
        self.pending.ids.is_empty()
            && self.deferred.is_empty()
            && self.attr_changes.is_empty()
            && self.touched.is_empty()
            && !self.centroids_dirty
            && !self.meta_dirty
            && self.cursor == self.base.end
    }

    /// Atomically applies every mutation.
    pub fn commit(mut self) -> Result<CommitInfo> {
        self.check()?;
        if self.is_empty_txn() {
            return Ok(CommitInfo {
                version: self.base.version,
                counters: self.counters,
            });
        }
        let result = self.commit_inner();
        if result.is_err() {
            self.poisoned = true;
        }
        let state = result?;
        let info = CommitInfo {
            version: state.version,
            counters: self.counters,
        };
        self.db.publish(state)?;
        Ok(info)
    }

    fn commit_inner(&mut self) -> Result<State> {
        self.materialize()?;
        self.merge_fragmented()?;

        for (&pid, p) in &self.work.partitions {
            if pid != DELTA && p.count > 0 && self.work.centroids.position(pid).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "partition {pid} holds vectors but has no centroid"
                )));
            }
        }

        if !self.attr_changes.is_empty() {
            let changes = std::mem::take(&mut self.attr_changes);
            let log = Arc::make_mut(&mut self.work.attr_log);
            if log.len() >= super::ATTR_LOG_LIMIT {
                log.clear();
                let full: Vec<AttrChange> = self
                    .work
                    .attributes
                    .rows
                    .iter()
                    .map(|(a, r)| AttrChange {
                        asset: a.to_string(),
                        record: Some((**r).clone()),
                    })
                    .collect();
                let block = format::frame(BlockKind::Attributes, &serde_json::to_vec(&full)?);
                let b = self.append_block(&block)?;
                Arc::make_mut(&mut self.work.attr_log).push(b);
            } else {
                let list: Vec<AttrChange> = changes
                    .into_iter()
                    .map(|(a, r)| AttrChange {
                        asset: a.to_string(),
                        record: r.map(|r| (*r).clone()),
                    })
                    .collect();
                let block = format::frame(BlockKind::Attributes, &serde_json::to_vec(&list)?);
                let b = self.append_block(&block)?;
                Arc::make_mut(&mut self.work.attr_log).push(b);
            }
        }

        if self.centroids_dirty {
            let c = self.work.centroids.clone();
            self.work.centroid_block = if c.is_empty() {
                None
            } else {
                Some(self.append_block(&format::encode_centroids(&c.ids, &c.data, self.work.dim))?)
            };
        }

        self.work.version = self.base.version + 1;
        let catalog = self.work.encode_catalog()?;
        let root = self.append_block(&catalog)?;
        self.work.root = Some(root);
        self.work.end = root.end();

        let db = self.db;
        let file = self.work.file.clone();
        if db.config().sync {
            file.file().sync_data()?;
        }
        db.kill_point(KillPoint::BodyWritten)?;

        let header = Header {
            dimension: self.work.dim as u32,
            metric: self.work.metric,
            root_offset: root.offset,
            root_len: root.len,
            txn_id: self.work.version,
        };
        let record = CommitRecord {
            header,
            body_start: self.base.end,
            body_end: self.cursor,
            body_crc: std::mem::take(&mut self.hasher).finalize(),
        }
        .encode();
        let jpath = db.journal_path();
        if db.kill_armed(KillPoint::JournalTorn) {
            journal::write_journal(&jpath, &record[..record.len() / 2])?;
            db.kill_point(KillPoint::JournalTorn)?;
        }
        journal::write_journal(&jpath, &record)?;
        db.kill_point(KillPoint::JournalCommitted)?;

        let hbytes = header.encode();
        if db.kill_armed(KillPoint::HeaderTorn) {
            file.write_at(0, &hbytes[..20])?;
            db.kill_point(KillPoint::HeaderTorn)?;
        }
        file.write_at(0, &hbytes)?;
        if db.config().sync {
            file.file().sync_data()?;
        }
        db.kill_point(KillPoint::HeaderWritten)?;
        journal::clear_journal(&jpath)?;
        file.set_durable_end(self.work.end);
        Ok(self.work.clone())
    }

    /// Discards every mutation.
    pub fn rollback(self) {}
}
