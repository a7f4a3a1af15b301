//! Immutable committed state and its on-disk catalog.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::attributes::{AttributeRecord, AttributeTable, Schema};
use super::file::DataFile;
use super::format::{self, BlockKind, BlockRef, Header, Segment, SegmentRef};
use super::{CentroidRecord, VectorRecord, DELTA};
use crate::hybrid::ColumnStats;
use crate::kernel::Metric;
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub(crate) struct PartitionEntry {
    pub count: u64,
    /// Ascending by block offset.
    pub segments: Arc<Vec<SegmentRef>>,
}

#[derive(Debug, Clone)]
pub(crate) struct VectorLoc {
    pub partition: u32,
    /// Block offset of the holding segment.
    pub segment: u64,
    pub row: u32,
    pub asset: Arc<str>,
}

/// Centroid table, ascending by partition id, row-major data.
#[derive(Debug, Clone, Default)]
pub struct CentroidTable {
    pub ids: Vec<u32>,
    pub data: Vec<f32>,
}

impl CentroidTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn row(&self, i: usize, dim: usize) -> &[f32] {
        &self.data[i * dim..(i + 1) * dim]
    }
}

/// Index bookkeeping recorded at build time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub built: bool,
    /// Average partition size right after the last full build.
    pub baseline_avg: f64,
    /// Vectors a query scans at build time: base nprobe times `baseline_avg`.
    pub target_scanned: f64,
    pub base_nprobe: usize,
    pub target_size: usize,
    pub builds: u64,
    pub flushes: u64,
}

#[derive(Serialize, Deserialize)]
struct CatalogPartition {
    id: u32,
    count: u64,
    segments: Vec<SegmentRef>,
}

#[derive(Serialize, Deserialize)]
struct Catalog {
    txn_id: u64,
    next_vector_id: u64,
    partitions: Vec<CatalogPartition>,
    centroids: Option<BlockRef>,
    attr_log: Vec<BlockRef>,
    schema: Schema,
    index: IndexMeta,
}

/// One entry of an attribute change block.
#[derive(Serialize, Deserialize)]
pub(crate) struct AttrChange {
    pub asset: String,
    pub record: Option<AttributeRecord>,
}

#[derive(Clone)]
pub(crate) struct State {
    pub version: u64,
    pub dim: usize,
    pub metric: Metric,
    pub file: Arc<DataFile>,
    /// Offset one past the last committed block.
    pub end: u64,
    pub root: Option<BlockRef>,
    pub next_vector_id: u64,
    pub partitions: BTreeMap<u32, PartitionEntry>,
    pub centroids: Arc<CentroidTable>,
    pub centroid_block: Option<BlockRef>,
    pub attr_log: Arc<Vec<BlockRef>>,
    pub attributes: AttributeTable,
    pub assets: im::HashMap<Arc<str>, Arc<[u64]>>,
    pub locations: im::HashMap<u64, VectorLoc>,
    pub schema: Schema,
    pub index: IndexMeta,
    pub stats: Arc<ColumnStats>,
}

impl State {
    pub fn empty(file: Arc<DataFile>, dim: usize, metric: Metric, schema: Schema) -> Self {
        let attributes = AttributeTable::new(&schema);
        State {
            version: 0,
            dim,
            metric,
            file,
            end: format::HEADER_LEN,
            root: None,
            next_vector_id: 1,
            partitions: BTreeMap::new(),
            centroids: Arc::new(CentroidTable::default()),
            centroid_block: None,
            attr_log: Arc::new(Vec::new()),
            stats: Arc::new(ColumnStats::build(&attributes, &schema, 0)),
            attributes,
            assets: im::HashMap::new(),
            locations: im::HashMap::new(),
            schema,
            index: IndexMeta::default(),
        }
    }

    /// Loads the state a header points at.
    pub fn load(file: Arc<DataFile>, header: &Header) -> Result<Self> {
        let dim = header.dimension as usize;
        if header.root_offset == 0 {
            let mut s = State::empty(file, dim, header.metric, Schema::default());
            s.version = header.txn_id;
            return Ok(s);
        }
        let root = BlockRef {
            offset: header.root_offset,
            len: header.root_len,
        };
        let payload = file.read_block(BlockKind::Catalog, root)?;
        let cat: Catalog =
            serde_json::from_slice(&payload).map_err(|e| file.corrupt(format!("catalog: {e}")))?;

        let centroids = match cat.centroids {
            Some(b) => {
                let raw = file.read_at(b.offset, b.len as usize)?;
                let (ids, data) = format::decode_centroids(&raw, dim).map_err(|r| file.corrupt(r))?;
                CentroidTable { ids, data }
            }
            None => CentroidTable::default(),
        };

        let mut attributes = AttributeTable::new(&cat.schema);
        for b in &cat.attr_log {
            let payload = file.read_block(BlockKind::Attributes, *b)?;
            let changes: Vec<AttrChange> = serde_json::from_slice(&payload)
                .map_err(|e| file.corrupt(format!("attribute block: {e}")))?;
            for ch in changes {
                let key: Arc<str> = Arc::from(ch.asset.as_str());
                match ch.record {
                    Some(r) => attributes.put(&key, Arc::new(r)),
                    None => {
                        attributes.remove(&key);
                    }
                }
            }
        }

        let mut partitions = BTreeMap::new();
        let mut locations = im::HashMap::new();
        let mut by_asset: HashMap<Arc<str>, Vec<u64>> = HashMap::new();
        for p in cat.partitions {
            let mut total = 0u64;
            for seg in &p.segments {
                let prefix = file.segment_prefix(seg)?;
                if prefix.partition != p.id {
                    return Err(file.corrupt(format!(
                        "segment at offset {} belongs to partition {}, catalog says {}",
                        seg.block.offset, prefix.partition, p.id
                    )));
                }
                for (row, (id, asset)) in prefix.ids.into_iter().zip(prefix.assets).enumerate() {
                    by_asset.entry(asset.clone()).or_default().push(id);
                    let prev = locations.insert(
                        id,
                        VectorLoc {
                            partition: p.id,
                            segment: seg.block.offset,
                            row: row as u32,
                            asset,
                        },
                    );
                    if prev.is_some() {
                        return Err(file.corrupt(format!("vector id {id} stored twice")));
                    }
                }
                total += seg.count as u64;
            }
            if total != p.count {
                return Err(file.corrupt(format!("partition {} count mismatch", p.id)));
            }
            partitions.insert(
                p.id,
                PartitionEntry {
                    count: p.count,
                    segments: Arc::new(p.segments),
                },
            );
        }
        let assets: im::HashMap<Arc<str>, Arc<[u64]>> = by_asset
            .into_iter()
            .map(|(a, mut ids)| {
                ids.sort_unstable();
                (a, Arc::from(ids))
            })
            .collect();
        let stats = Arc::new(ColumnStats::build(&attributes, &cat.schema, assets.len()));
        Ok(State {
            version: header.txn_id,
            dim,
            metric: header.metric,
            file,
            end: root.end(),
            root: Some(root),
            next_vector_id: cat.next_vector_id,
            partitions,
            centroids: Arc::new(centroids),
            centroid_block: cat.centroids,
            attr_log: Arc::new(cat.attr_log),
            attributes,
            assets,
            locations,
            schema: cat.schema,
            index: cat.index,
            stats,
        })
    }

    pub fn encode_catalog(&self) -> Result<Vec<u8>> {
        let cat = Catalog {
            txn_id: self.version,
            next_vector_id: self.next_vector_id,
            partitions: self
                .partitions
                .iter()
                .filter(|(_, p)| p.count > 0)
                .map(|(&id, p)| CatalogPartition {
                    id,
                    count: p.count,
                    segments: p.segments.as_ref().clone(),
                })
                .collect(),
            centroids: self.centroid_block,
            attr_log: self.attr_log.as_ref().clone(),
            schema: self.schema.clone(),
            index: self.index.clone(),
        };
        Ok(format::frame(BlockKind::Catalog, &serde_json::to_vec(&cat)?))
    }

    /// Bytes referenced by this state.
    pub fn live_bytes(&self) -> u64 {
        let segs: u64 = self
            .partitions
            .values()
            .flat_map(|p| p.segments.iter())
            .map(|s| s.block.len as u64)
            .sum();
        let attrs: u64 = self.attr_log.iter().map(|b| b.len as u64).sum();
        format::HEADER_LEN
            + segs
            + attrs
            + self.centroid_block.map_or(0, |b| b.len as u64)
            + self.root.map_or(0, |b| b.len as u64)
    }

    pub fn vector_count(&self) -> u64 {
        self.partitions.values().map(|p| p.count).sum()
    }

    pub fn partition_count(&self, id: u32) -> u64 {
        self.partitions.get(&id).map_or(0, |p| p.count)
    }

    pub fn delta_count(&self) -> u64 {
        self.partition_count(DELTA)
    }

    pub fn segments(&self, id: u32) -> &[SegmentRef] {
        self.partitions.get(&id).map_or(&[], |p| p.segments.as_slice())
    }

    pub fn segment_ref(&self, loc: &VectorLoc) -> Result<SegmentRef> {
        let segs = self.segments(loc.partition);
        segs.binary_search_by_key(&loc.segment, |s| s.block.offset)
            .map(|i| segs[i])
            .map_err(|_| self.file.corrupt(format!("dangling location for segment {}", loc.segment)))
    }

    pub fn read_segment(&self, seg: &SegmentRef, cached: bool) -> Result<Arc<Segment>> {
        self.file.segment(seg, cached)
    }

    pub fn centroid_records(&self) -> Vec<CentroidRecord> {
        self.centroids
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| CentroidRecord {
                partition_id: id,
                centroid: self.centroids.row(i, self.dim).to_vec(),
            })
            .collect()
    }

    pub fn scan_partition(self: &Arc<Self>, id: u32) -> PartitionScan {
        PartitionScan {
            state: self.clone(),
            partition: id,
            next_segment: 0,
            current: None,
            row: 0,
            failed: false,
        }
    }

    /// Embedding of one vector, through the segment cache when warm.
    pub fn fetch_vector(&self, id: u64, out: &mut Vec<f32>) -> Result<()> {
        let loc = self.locations.get(&id).ok_or(Error::UnknownVector(id))?;
        let seg = self.segment_ref(loc)?;
        if let Some(s) = self.file.cached_segment(&seg) {
            out.clear();
            let r = loc.row as usize;
            out.extend_from_slice(&s.embeddings[r * self.dim..(r + 1) * self.dim]);
            return Ok(());
        }
        self.file.row(&seg, loc.row, out)
    }
}

/// Ordered stream of one partition's records.
pub struct PartitionScan {
    state: Arc<State>,
    partition: u32,
    next_segment: usize,
    current: Option<Arc<Segment>>,
    row: usize,
    failed: bool,
}

impl Iterator for PartitionScan {
    type Item = Result<VectorRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(seg) = &self.current {
                if self.row < seg.len() {
                    let r = self.row;
                    self.row += 1;
                    let dim = self.state.dim;
                    return Some(Ok(VectorRecord {
                        vector_id: seg.ids[r],
                        asset_id: seg.assets[r].clone(),
                        partition_id: self.partition,
                        embedding: seg.embeddings[r * dim..(r + 1) * dim].to_vec(),
                    }));
                }
            }
            let segs = self.state.segments(self.partition);
            let Some(seg) = segs.get(self.next_segment).copied() else {
                return None;
            };
            self.next_segment += 1;
            self.row = 0;
            match self.state.read_segment(&seg, true) {
                Ok(s) => self.current = Some(s),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}
