//! Positional access to the main store file, with a decoded-segment cache
//! and I/O counters.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use super::format::{self, BlockKind, BlockRef, Segment, SegmentPrefix, SegmentRef, FRAME_HEAD};
use crate::{Error, Result};

/// Counters shared by every file generation of one database.
#[derive(Debug, Default)]
pub struct IoCounters {
    /// Segment regions touched (cache hits included).
    pub segment_accesses: AtomicU64,
    /// Segment regions read from disk.
    pub segment_reads: AtomicU64,
    /// Single-row embedding fetches.
    pub row_fetches: AtomicU64,
    pub bytes_read: AtomicU64,
    pub bytes_written: AtomicU64,
}

/// Point-in-time copy of [`IoCounters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoSnapshot {
    pub segment_accesses: u64,
    pub segment_reads: u64,
    pub row_fetches: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

impl IoCounters {
    pub fn snapshot(&self) -> IoSnapshot {
        IoSnapshot {
            segment_accesses: self.segment_accesses.load(Ordering::Relaxed),
            segment_reads: self.segment_reads.load(Ordering::Relaxed),
            row_fetches: self.row_fetches.load(Ordering::Relaxed),
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
        }
    }
}

impl IoSnapshot {
    pub fn since(&self, earlier: &IoSnapshot) -> IoSnapshot {
        IoSnapshot {
            segment_accesses: self.segment_accesses - earlier.segment_accesses,
            segment_reads: self.segment_reads - earlier.segment_reads,
            row_fetches: self.row_fetches - earlier.row_fetches,
            bytes_read: self.bytes_read - earlier.bytes_read,
            bytes_written: self.bytes_written - earlier.bytes_written,
        }
    }
}

struct SegmentCache {
    map: LruCache<u64, Arc<Segment>>,
    bytes: usize,
    limit: usize,
}

impl SegmentCache {
    fn get(&mut self, offset: u64) -> Option<Arc<Segment>> {
        self.map.get(&offset).cloned()
    }

    fn put(&mut self, offset: u64, seg: Arc<Segment>) {
        let size = seg.approx_bytes();
        if size > self.limit {
            return;
        }
        if let Some(old) = self.map.put(offset, seg) {
            self.bytes -= old.approx_bytes();
        }
        self.bytes += size;
        while self.bytes > self.limit {
            match self.map.pop_lru() {
                Some((_, old)) => self.bytes -= old.approx_bytes(),
                None => break,
            }
        }
    }
}

/// One generation of the main file. Compaction swaps in a new generation;
/// snapshots keep the old one alive until they are dropped.
pub struct DataFile {
    path: PathBuf,
    file: File,
    dim: usize,
    /// Blocks below this offset are committed and may be cached.
    durable_end: AtomicU64,
    cache: Option<Mutex<SegmentCache>>,
    counters: Arc<IoCounters>,
}

impl DataFile {
    pub(crate) fn new(
        path: &Path,
        file: File,
        dim: usize,
        durable_end: u64,
        cache_bytes: usize,
        counters: Arc<IoCounters>,
    ) -> Self {
        let cache = (cache_bytes > 0).then(|| {
            Mutex::new(SegmentCache {
                map: LruCache::unbounded(),
                bytes: 0,
                limit: cache_bytes,
            })
        });
        Self {
            path: path.to_path_buf(),
            file,
            dim,
            durable_end: AtomicU64::new(durable_end),
            cache,
            counters,
        }
    }

    pub(crate) fn file(&self) -> &File {
        &self.file
    }

    pub(crate) fn counters(&self) -> &Arc<IoCounters> {
        &self.counters
    }

    pub(crate) fn set_durable_end(&self, end: u64) {
        self.durable_end.store(end, Ordering::Release);
    }

    pub(crate) fn clear_cache(&self) {
        if let Some(c) = &self.cache {
            let mut c = c.lock();
            c.map.clear();
            c.bytes = 0;
        }
    }

    pub(crate) fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::corrupt(&self.path, reason)
    }

    pub(crate) fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.file.read_exact_at(&mut buf, offset).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.corrupt(format!("read past end of file at offset {offset}"))
            } else {
                Error::Io(e)
            }
        })?;
        self.counters.bytes_read.fetch_add(len as u64, Ordering::Relaxed);
        Ok(buf)
    }

    pub(crate) fn write_at(&self, offset: u64, bytes: &[u8]) -> Result<()> {
        self.file.write_all_at(bytes, offset)?;
        self.counters
            .bytes_written
            .fetch_add(bytes.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    pub(crate) fn read_block(&self, kind: BlockKind, at: BlockRef) -> Result<Vec<u8>> {
        let raw = self.read_at(at.offset, at.len as usize)?;
        let payload = format::unframe(kind, &raw).map_err(|r| self.corrupt(format!("{r} at offset {}", at.offset)))?;
        Ok(payload.to_vec())
    }

    /// Whole decoded segment. `cached = false` neither consults nor fills
    /// the cache, for one-pass streaming reads.
    pub(crate) fn segment(&self, seg: &SegmentRef, cached: bool) -> Result<Arc<Segment>> {
        self.counters.segment_accesses.fetch_add(1, Ordering::Relaxed);
        let cacheable = cached && seg.block.end() <= self.durable_end.load(Ordering::Acquire);
        if cacheable {
            if let Some(c) = &self.cache {
                if let Some(hit) = c.lock().get(seg.block.offset) {
                    return Ok(hit);
                }
            }
        }
        self.counters.segment_reads.fetch_add(1, Ordering::Relaxed);
        let raw = self.read_at(seg.block.offset, seg.block.len as usize)?;
        let decoded = format::decode_segment(&raw, self.dim)
            .map_err(|r| self.corrupt(format!("{r} in segment at offset {}", seg.block.offset)))?;
        if decoded.len() != seg.count as usize {
            return Err(self.corrupt(format!("segment at offset {} has unexpected row count", seg.block.offset)));
        }
        let decoded = Arc::new(decoded);
        if cacheable {
            if let Some(c) = &self.cache {
                c.lock().put(seg.block.offset, decoded.clone());
            }
        }
        Ok(decoded)
    }

    /// Cached segment if present, without touching the disk.
    pub(crate) fn cached_segment(&self, seg: &SegmentRef) -> Option<Arc<Segment>> {
        let c = self.cache.as_ref()?;
        let hit = c.lock().get(seg.block.offset);
        if hit.is_some() {
            self.counters.segment_accesses.fetch_add(1, Ordering::Relaxed);
        }
        hit
    }

    /// Ids and asset ids of a segment.
    pub(crate) fn segment_prefix(&self, seg: &SegmentRef) -> Result<SegmentPrefix> {
        let raw = self.read_at(seg.block.offset, seg.prefix_len().max(FRAME_HEAD))?;
        let prefix = format::decode_segment_prefix(&raw)
            .map_err(|r| self.corrupt(format!("{r} in segment at offset {}", seg.block.offset)))?;
        if prefix.ids.len() != seg.count as usize {
            return Err(self.corrupt(format!("segment at offset {} has unexpected row count", seg.block.offset)));
        }
        Ok(prefix)
    }

    /// `count` contiguous embedding rows starting at `start`, read directly.
    pub(crate) fn rows(&self, seg: &SegmentRef, start: u32, count: u32, out: &mut Vec<f32>) -> Result<()> {
        if start as u64 + count as u64 > seg.count as u64 {
            return Err(self.corrupt("row range outside segment"));
        }
        self.counters.row_fetches.fetch_add(count as u64, Ordering::Relaxed);
        let raw = self.read_at(seg.row_offset(start, self.dim), count as usize * self.dim * 4)?;
        format::decode_f32s(&raw, out);
        Ok(())
    }

    /// One embedding row, read directly.
    pub(crate) fn row(&self, seg: &SegmentRef, row: u32, out: &mut Vec<f32>) -> Result<()> {
        if row >= seg.count {
            return Err(self.corrupt("row index outside segment"));
        }
        self.counters.row_fetches.fetch_add(1, Ordering::Relaxed);
        let raw = self.read_at(seg.row_offset(row, self.dim), self.dim * 4)?;
        format::decode_f32s(&raw, out);
        Ok(())
    }
}
