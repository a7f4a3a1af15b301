//! Single-file record store: vector segments clustered by partition,
//! centroid table, attribute table and catalog, with snapshot reads and one
//! serialized writer.
//!
//! Every commit appends blocks and a new catalog, then flips the header root
//! through the journal record (see [`journal`]). A [`Snapshot`] is an
//! immutable in-memory state plus a handle on the file generation it
//! references, so readers never block on the writer.

mod attributes;
mod file;
pub(crate) mod format;
mod journal;
mod state;
mod txn;

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use attributes::{tokenize, AttributeRecord, AttributeTable, ColumnType, Schema, Value};
pub use file::{IoCounters, IoSnapshot};
pub use format::{FORMAT_VERSION, HEADER_LEN, MAGIC};
pub use journal::journal_path;
pub use state::{CentroidTable, IndexMeta, PartitionScan};
pub use txn::{CommitInfo, TxnCounters, WriteTxn};

pub(crate) use attributes::{ColumnIndex, F64Key};
pub(crate) use state::State;

use crate::kernel::Metric;
use crate::{Error, Result};
use file::DataFile;
use format::{BlockKind, BlockRef, Header, SegmentRef};

/// Partition id of the delta store.
pub const DELTA: u32 = u32::MAX;

/// Rows per vector segment.
pub const DEFAULT_SEGMENT_CAPACITY: usize = 1024;

/// Attribute change blocks kept before they are folded into one.
pub(crate) const ATTR_LOG_LIMIT: usize = 64;

/// Places in the commit sequence where a crash can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KillPoint {
    /// Blocks appended and synced, no commit record yet.
    BodyWritten,
    /// Commit record only half written.
    JournalTorn,
    /// Commit record durable, header not yet rewritten.
    JournalCommitted,
    /// Header only partly rewritten.
    HeaderTorn,
    /// Header rewritten, commit record not yet removed.
    HeaderWritten,
}

impl KillPoint {
    pub const ALL: [KillPoint; 5] = [
        KillPoint::BodyWritten,
        KillPoint::JournalTorn,
        KillPoint::JournalCommitted,
        KillPoint::HeaderTorn,
        KillPoint::HeaderWritten,
    ];

    /// Whether a crash here leaves the transaction committed.
    pub fn is_after_commit(self) -> bool {
        matches!(
            self,
            KillPoint::JournalCommitted | KillPoint::HeaderTorn | KillPoint::HeaderWritten
        )
    }
}

/// One stored embedding row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub vector_id: u64,
    pub asset_id: Arc<str>,
    pub partition_id: u32,
    pub embedding: Vec<f32>,
}

/// One IVF centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidRecord {
    pub partition_id: u32,
    pub centroid: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct DbConfig {
    /// Required when creating a store; checked against an existing one.
    pub dimension: Option<usize>,
    /// Defaults to squared L2 for new stores; checked against an existing one.
    pub metric: Option<Metric>,
    /// Columns added to the stored schema on open.
    pub schema: Schema,
    pub writer_timeout: Duration,
    /// Decoded segment cache size; 0 disables it.
    pub cache_bytes: usize,
    /// fsync at commit.
    pub sync: bool,
    pub search_workers: usize,
    pub segment_capacity: usize,
    /// Compaction never runs on files smaller than this.
    pub compaction_min_bytes: u64,
}

impl Default for DbConfig {
    fn default() -> Self {
        Self {
            dimension: None,
            metric: None,
            schema: Schema::default(),
            writer_timeout: Duration::from_secs(5),
            cache_bytes: 64 << 20,
            sync: true,
            search_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            segment_capacity: DEFAULT_SEGMENT_CAPACITY,
            compaction_min_bytes: 8 << 20,
        }
    }
}

impl DbConfig {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: Some(dimension),
            ..Self::default()
        }
    }

    pub fn metric(mut self, metric: Metric) -> Self {
        self.metric = Some(metric);
        self
    }

    pub fn schema(mut self, schema: Schema) -> Self {
        self.schema = schema;
        self
    }

    pub fn writer_timeout(mut self, t: Duration) -> Self {
        self.writer_timeout = t;
        self
    }

    pub fn cache_bytes(mut self, bytes: usize) -> Self {
        self.cache_bytes = bytes;
        self
    }

    pub fn sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn search_workers(mut self, n: usize) -> Self {
        self.search_workers = n.max(1);
        self
    }

    pub fn segment_capacity(mut self, rows: usize) -> Self {
        self.segment_capacity = rows.max(1);
        self
    }
}

struct Inner {
    path: PathBuf,
    journal: PathBuf,
    config: DbConfig,
    current: RwLock<Arc<State>>,
    writer: Mutex<()>,
    pool: Arc<rayon::ThreadPool>,
    crashed: AtomicBool,
    kill: Mutex<Option<KillPoint>>,
    counters: Arc<IoCounters>,
}

/// Handle on an open store. Cheap to clone and share between threads.
#[derive(Clone)]
pub struct Database {
    inner: Arc<Inner>,
}

pub(crate) fn build_pool(workers: usize) -> Result<Arc<rayon::ThreadPool>> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .thread_name(|i| format!("ivfdb-scan-{i}"))
        .build()
        .map(Arc::new)
        .map_err(|e| Error::InvalidArgument(format!("cannot start scan workers: {e}")))
}

fn open_rw(path: &Path, create: bool) -> Result<std::fs::File> {
    Ok(OpenOptions::new().read(true).write(true).create(create).open(path)?)
}

fn sync_parent(path: &Path) {
    if let Some(dir) = path.parent() {
        let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
        if let Ok(d) = std::fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
}

/// Brings the main file to its last committed state. Returns the header.
fn recover(path: &Path, jpath: &Path, file: &std::fs::File) -> Result<Header> {
    use std::os::unix::fs::FileExt;
    let len = file.metadata()?.len();
    let mut raw = vec![0u8; HEADER_LEN as usize];
    let header = if len >= HEADER_LEN {
        file.read_exact_at(&mut raw, 0)?;
        Header::decode(&raw)
    } else {
        Err("truncated header".to_string())
    };
    let record = journal::read_journal(jpath)?;
    let mut header = header;
    if let Some(rec) = record {
        let body_ok = rec.body_end <= len
            && rec.body_start <= rec.body_end
            && journal::range_crc(file, rec.body_start, rec.body_end)? == rec.body_crc;
        let newer = match &header {
            Ok(h) => h.txn_id < rec.header.txn_id,
            Err(_) => true,
        };
        if newer {
            if !body_ok {
                return Err(Error::Replay(format!(
                    "commit record for transaction {} does not match the file body",
                    rec.header.txn_id
                )));
            }
            file.write_all_at(&rec.header.encode(), 0)?;
            file.sync_data()?;
            header = Ok(rec.header);
        }
    }
    journal::clear_journal(jpath)?;
    let header = header.map_err(|r| Error::corrupt(path, r))?;
    let end = if header.root_offset == 0 {
        HEADER_LEN
    } else {
        header.root_offset + header.root_len as u64
    };
    if end > len {
        return Err(Error::corrupt(path, "root catalog lies past the end of the file"));
    }
    if len > end {
        file.set_len(end)?;
        file.sync_data()?;
    }
    Ok(header)
}

impl Database {
    /// Opens or creates the store at `path`, replaying an interrupted commit.
    pub fn open(path: impl AsRef<Path>, config: DbConfig) -> Result<Database> {
        let path = path.as_ref().to_path_buf();
        let jpath = journal_path(&path);
        let exists = std::fs::metadata(&path).map(|m| m.len() > 0).unwrap_or(false);
        let counters = Arc::new(IoCounters::default());
        let (file, header) = if exists {
            let file = open_rw(&path, false)?;
            let header = recover(&path, &jpath, &file)?;
            (file, header)
        } else {
            let dim = config
                .dimension
                .ok_or_else(|| Error::InvalidArgument("a dimension is required to create a store".into()))?;
            if dim == 0 || dim > u32::MAX as usize {
                return Err(Error::InvalidArgument("dimension must be at least 1".into()));
            }
            journal::clear_journal(&jpath)?;
            let file = open_rw(&path, true)?;
            let header = Header {
                dimension: dim as u32,
                metric: config.metric.unwrap_or(Metric::SquaredL2),
                root_offset: 0,
                root_len: 0,
                txn_id: 0,
            };
            use std::os::unix::fs::FileExt;
            file.set_len(0)?;
            file.write_all_at(&header.encode(), 0)?;
            file.sync_all()?;
            sync_parent(&path);
            (file, header)
        };
        if let Some(d) = config.dimension {
            if d != header.dimension as usize {
                return Err(Error::DimensionMismatch {
                    expected: header.dimension as usize,
                    actual: d,
                });
            }
        }
        if let Some(m) = config.metric {
            if m != header.metric {
                return Err(Error::MetricMismatch {
                    stored: header.metric.to_string(),
                    requested: m.to_string(),
                });
            }
        }
        let end = if header.root_offset == 0 {
            HEADER_LEN
        } else {
            header.root_offset + header.root_len as u64
        };
        let data = Arc::new(DataFile::new(
            &path,
            file,
            header.dimension as usize,
            end,
            config.cache_bytes,
            counters.clone(),
        ));
        let state = State::load(data, &header)?;
        let pool = build_pool(config.search_workers)?;
        let extra_schema = config.schema.clone();
        let db = Database {
            inner: Arc::new(Inner {
                path,
                journal: jpath,
                config,
                current: RwLock::new(Arc::new(state)),
                writer: Mutex::new(()),
                pool,
                crashed: AtomicBool::new(false),
                kill: Mutex::new(None),
                counters,
            }),
        };
        let stored = db.snapshot().state.schema.clone();
        if stored.merged(&extra_schema)? != stored {
            let mut txn = db.begin_write()?;
            txn.extend_schema(&extra_schema)?;
            txn.refresh_stats();
            txn.commit()?;
        }
        Ok(db)
    }

    pub fn path(&self) -> &Path {
        &self.inner.path
    }

    pub(crate) fn journal_path(&self) -> PathBuf {
        self.inner.journal.clone()
    }

    pub fn config(&self) -> &DbConfig {
        &self.inner.config
    }

    pub(crate) fn segment_capacity(&self) -> usize {
        self.inner.config.segment_capacity
    }

    pub fn io_counters(&self) -> &Arc<IoCounters> {
        &self.inner.counters
    }

    /// Snapshot of the latest committed state.
    pub fn snapshot(&self) -> Snapshot {
        let state = self.inner.current.read().clone();
        self.snapshot_of(state)
    }

    pub(crate) fn snapshot_of(&self, state: Arc<State>) -> Snapshot {
        Snapshot {
            state,
            pool: self.inner.pool.clone(),
        }
    }

    /// Starts the write transaction, waiting up to the configured timeout.
    pub fn begin_write(&self) -> Result<WriteTxn<'_>> {
        if self.is_crashed() {
            return Err(Error::Crashed);
        }
        let guard = self
            .inner
            .writer
            .try_lock_for(self.inner.config.writer_timeout)
            .ok_or(Error::Busy)?;
        if self.is_crashed() {
            return Err(Error::Crashed);
        }
        let base = self.inner.current.read().clone();
        Ok(WriteTxn::new(self, guard, base))
    }

    /// Drops every cached segment.
    pub fn clear_cache(&self) {
        self.inner.current.read().file.clear_cache();
    }

    pub fn is_crashed(&self) -> bool {
        self.inner.crashed.load(Ordering::Acquire)
    }

    /// Makes the next commit stop at `kp` as if the process died there.
    pub fn arm_kill_point(&self, kp: KillPoint) {
        *self.inner.kill.lock() = Some(kp);
    }

    pub(crate) fn kill_armed(&self, kp: KillPoint) -> bool {
        *self.inner.kill.lock() == Some(kp)
    }

    pub(crate) fn kill_point(&self, kp: KillPoint) -> Result<()> {
        let mut armed = self.inner.kill.lock();
        if *armed == Some(kp) {
            *armed = None;
            self.inner.crashed.store(true, Ordering::Release);
            return Err(Error::InjectedCrash(kp));
        }
        Ok(())
    }

    /// Installs a committed state. Runs compaction when the file has
    /// grown well past the data it still references.
    pub(crate) fn publish(&self, state: State) -> Result<()> {
        let live = state.live_bytes();
        let needs_compaction = state.end > self.inner.config.compaction_min_bytes && state.end > 2 * live;
        *self.inner.current.write() = Arc::new(state);
        if needs_compaction {
            let current = self.inner.current.read().clone();
            let compacted = self.compact_state(&current)?;
            *self.inner.current.write() = Arc::new(compacted);
        }
        Ok(())
    }

    /// Rewrites the file with only live blocks.
    pub fn compact(&self) -> Result<()> {
        let txn = self.begin_write()?;
        let current = self.inner.current.read().clone();
        let compacted = self.compact_state(&current)?;
        *self.inner.current.write() = Arc::new(compacted);
        drop(txn);
        Ok(())
    }

    fn compact_state(&self, state: &State) -> Result<State> {
        use std::os::unix::fs::FileExt;
        let mut tmp_name = self.inner.path.as_os_str().to_os_string();
        tmp_name.push(".compact");
        let tmp = PathBuf::from(tmp_name);
        let out = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&tmp)?;
        let mut cursor = HEADER_LEN;
        let mut next = state.clone();
        let mut copy = |b: BlockRef| -> Result<BlockRef> {
            let raw = state.file.read_at(b.offset, b.len as usize)?;
            out.write_all_at(&raw, cursor)?;
            let moved = BlockRef {
                offset: cursor,
                len: b.len,
            };
            cursor += b.len as u64;
            Ok(moved)
        };
        for entry in next.partitions.values_mut() {
            let segs: Vec<SegmentRef> = entry
                .segments
                .iter()
                .map(|s| {
                    let block = copy(s.block)?;
                    Ok(SegmentRef {
                        block,
                        count: s.count,
                        emb_offset: block.offset + (s.emb_offset - s.block.offset),
                    })
                })
                .collect::<Result<_>>()?;
            entry.segments = Arc::new(segs);
        }
        next.centroid_block = state.centroid_block.map(&mut copy).transpose()?;
        let mut log = Vec::new();
        if !state.attributes.is_empty() {
            let full: Vec<state::AttrChange> = state
                .attributes
                .rows
                .iter()
                .map(|(a, r)| state::AttrChange {
                    asset: a.to_string(),
                    record: Some((**r).clone()),
                })
                .collect();
            let block = format::frame(BlockKind::Attributes, &serde_json::to_vec(&full)?);
            out.write_all_at(&block, cursor)?;
            log.push(BlockRef {
                offset: cursor,
                len: block.len() as u32,
            });
            cursor += block.len() as u64;
        }
        next.attr_log = Arc::new(log);
        let catalog = next.encode_catalog()?;
        out.write_all_at(&catalog, cursor)?;
        let header = Header {
            dimension: state.dim as u32,
            metric: state.metric,
            root_offset: cursor,
            root_len: catalog.len() as u32,
            txn_id: state.version,
        };
        cursor += catalog.len() as u64;
        out.write_all_at(&header.encode(), 0)?;
        out.sync_all()?;
        drop(out);
        std::fs::rename(&tmp, &self.inner.path)?;
        sync_parent(&self.inner.path);
        let file = open_rw(&self.inner.path, false)?;
        let data = Arc::new(DataFile::new(
            &self.inner.path,
            file,
            state.dim,
            cursor,
            self.inner.config.cache_bytes,
            self.inner.counters.clone(),
        ));
        let mut loaded = State::load(data, &header)?;
        loaded.stats = state.stats.clone();
        Ok(loaded)
    }

    /// Size of the main file in bytes.
    pub fn file_len(&self) -> Result<u64> {
        Ok(std::fs::metadata(&self.inner.path)?.len())
    }
}

/// Read-only view of one committed state.
#[derive(Clone)]
pub struct Snapshot {
    pub(crate) state: Arc<State>,
    pub(crate) pool: Arc<rayon::ThreadPool>,
}

impl Snapshot {
    /// Same state, scanned by a dedicated pool of `n` workers.
    pub fn with_workers(&self, n: usize) -> Result<Snapshot> {
        Ok(Snapshot {
            state: self.state.clone(),
            pool: build_pool(n)?,
        })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Commit counter of the state.
    pub fn version(&self) -> u64 {
        self.state.version
    }

    pub fn dimension(&self) -> usize {
        self.state.dim
    }

    pub fn metric(&self) -> Metric {
        self.state.metric
    }

    pub fn schema(&self) -> &Schema {
        &self.state.schema
    }

    pub fn index_meta(&self) -> &IndexMeta {
        &self.state.index
    }

    pub fn vector_count(&self) -> u64 {
        self.state.vector_count()
    }

    pub fn delta_count(&self) -> u64 {
        self.state.delta_count()
    }

    pub fn asset_count(&self) -> usize {
        self.state.assets.len()
    }

    /// Non-empty partitions, ascending, the delta partition last.
    pub fn partition_ids(&self) -> Vec<u32> {
        self.state.partitions.keys().copied().collect()
    }

    pub fn partition_size(&self, id: u32) -> u64 {
        self.state.partition_count(id)
    }

    /// Storage segments currently holding the partition.
    pub fn partition_segments(&self, id: u32) -> usize {
        self.state.segments(id).len()
    }

    pub fn centroid_count(&self) -> usize {
        self.state.centroids.len()
    }

    pub fn scan_centroids(&self) -> Vec<CentroidRecord> {
        self.state.centroid_records()
    }

    pub fn scan_partition(&self, id: u32) -> PartitionScan {
        self.state.scan_partition(id)
    }

    pub fn asset_vectors(&self, asset_id: &str) -> Vec<u64> {
        self.state.assets.get(asset_id).map_or_else(Vec::new, |ids| ids.to_vec())
    }

    pub fn attributes(&self, asset_id: &str) -> Option<AttributeRecord> {
        self.state.attributes.get(asset_id).map(|r| (**r).clone())
    }

    pub fn get_vector(&self, vector_id: u64) -> Result<Option<VectorRecord>> {
        let Some(loc) = self.state.locations.get(&vector_id) else {
            return Ok(None);
        };
        let mut emb = Vec::new();
        self.state.fetch_vector(vector_id, &mut emb)?;
        Ok(Some(VectorRecord {
            vector_id,
            asset_id: loc.asset.clone(),
            partition_id: loc.partition,
            embedding: emb,
        }))
    }

    pub fn partition_of(&self, vector_id: u64) -> Option<u32> {
        self.state.locations.get(&vector_id).map(|l| l.partition)
    }

    pub fn io_counters(&self) -> &Arc<IoCounters> {
        self.state.file.counters()
    }

    /// Attribute statistics as of the last build, flush or open.
    pub fn column_stats(&self) -> &crate::hybrid::ColumnStats {
        &self.state.stats
    }
}
