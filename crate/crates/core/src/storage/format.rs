//! On-disk layout of the main store file.
//!
//! ```text
//! header (64 bytes)
//!   0  "MVEC"
//!   4  format version   u32
//!   8  dimension        u32
//!   12 metric tag       u8
//!   16 root offset      u64   (0 = empty store)
//!   24 root length      u32
//!   32 txn id           u64
//!   40 crc32 of [0, 40) u32
//! blocks, appended
//!   kind u8 | 3 reserved | payload len u32 | payload | crc32(kind..payload) u32
//! ```
//!
//! A vector segment keeps one partition's rows contiguous, with the
//! embeddings as one little-endian f32 run in exactly the layout the distance
//! kernels consume.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::kernel::Metric;

pub const MAGIC: &[u8; 4] = b"MVEC";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 64;
pub const FRAME_HEAD: usize = 8;
pub const FRAME_TAIL: usize = 4;
const SEGMENT_FIXED: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum BlockKind {
    Segment = 1,
    Centroids = 2,
    Attributes = 3,
    Catalog = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub dimension: u32,
    pub metric: Metric,
    pub root_offset: u64,
    pub root_len: u32,
    pub txn_id: u64,
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&self.dimension.to_le_bytes());
        b[12] = self.metric.tag();
        b[16..24].copy_from_slice(&self.root_offset.to_le_bytes());
        b[24..28].copy_from_slice(&self.root_len.to_le_bytes());
        b[32..40].copy_from_slice(&self.txn_id.to_le_bytes());
        let crc = crc32fast::hash(&b[0..40]);
        b[40..44].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, String> {
        if b.len() < HEADER_LEN as usize {
            return Err("truncated header".into());
        }
        if &b[0..4] != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let crc = u32::from_le_bytes(b[40..44].try_into().unwrap());
        if crc != crc32fast::hash(&b[0..40]) {
            return Err("header checksum mismatch".into());
        }
        let metric = Metric::from_tag(b[12]).ok_or_else(|| format!("unknown metric tag {}", b[12]))?;
        Ok(Header {
            dimension: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            metric,
            root_offset: u64::from_le_bytes(b[16..24].try_into().unwrap()),
            root_len: u32::from_le_bytes(b[24..28].try_into().unwrap()),
            txn_id: u64::from_le_bytes(b[32..40].try_into().unwrap()),
        })
    }
}

/// Location of a framed block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRef {
    pub offset: u64,
    pub len: u32,
}

impl BlockRef {
    pub fn end(&self) -> u64 {
        self.offset + self.len as u64
    }
}

/// Location and shape of a vector segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub block: BlockRef,
    pub count: u32,
    /// Absolute file offset of the first embedding.
    pub emb_offset: u64,
}

impl SegmentRef {
    pub fn row_offset(&self, row: u32, dim: usize) -> u64 {
        self.emb_offset + row as u64 * dim as u64 * 4
    }

    /// Byte range holding ids and asset ids, relative to the block start.
    pub fn prefix_len(&self) -> usize {
        (self.emb_offset - self.block.offset) as usize
    }
}

pub fn frame(kind: BlockKind, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEAD + payload.len() + FRAME_TAIL);
    out.push(kind as u8);
    out.extend_from_slice(&[0, 0, 0]);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks a complete framed block and returns its payload.
pub fn unframe(kind: BlockKind, block: &[u8]) -> Result<&[u8], String> {
    if block.len() < FRAME_HEAD + FRAME_TAIL {
        return Err("truncated block".into());
    }
    if block[0] != kind as u8 {
        return Err(format!("expected block kind {:?}, found tag {}", kind, block[0]));
    }
    let len = u32::from_le_bytes(block[4..8].try_into().unwrap()) as usize;
    if FRAME_HEAD + len + FRAME_TAIL != block.len() {
        return Err("block length mismatch".into());
    }
    let body_end = FRAME_HEAD + len;
    let crc = u32::from_le_bytes(block[body_end..].try_into().unwrap());
    if crc != crc32fast::hash(&block[..body_end]) {
        return Err("block checksum mismatch".into());
    }
    Ok(&block[FRAME_HEAD..body_end])
}

/// Row data for building a segment.
pub struct SegmentRows<'a> {
    pub partition: u32,
    pub ids: &'a [u64],
    pub assets: &'a [Arc<str>],
    pub embeddings: &'a [f32],
}

/// Encodes a framed segment block. Returns the block and the offset of the
/// embedding run relative to the block start.
pub fn encode_segment(rows: &SegmentRows<'_>) -> (Vec<u8>, usize) {
    let n = rows.ids.len();
    let assets_len: usize = rows.assets.iter().map(|a| 2 + a.len()).sum();
    let assets_padded = (assets_len + 3) & !3;
    let mut p = Vec::with_capacity(SEGMENT_FIXED + 8 * n + assets_padded + 4 * rows.embeddings.len());
    p.extend_from_slice(&rows.partition.to_le_bytes());
    p.extend_from_slice(&(n as u32).to_le_bytes());
    p.extend_from_slice(&(assets_padded as u32).to_le_bytes());
    p.extend_from_slice(&0u32.to_le_bytes());
    for id in rows.ids {
        p.extend_from_slice(&id.to_le_bytes());
    }
    for a in rows.assets {
        p.extend_from_slice(&(a.len() as u16).to_le_bytes());
        p.extend_from_slice(a.as_bytes());
    }
    p.resize(SEGMENT_FIXED + 8 * n + assets_padded, 0);
    for x in rows.embeddings {
        p.extend_from_slice(&x.to_le_bytes());
    }
    let emb_rel = FRAME_HEAD + SEGMENT_FIXED + 8 * n + assets_padded;
    (frame(BlockKind::Segment, &p), emb_rel)
}

/// Decoded id columns of a segment.
pub struct SegmentPrefix {
    pub partition: u32,
    pub ids: Vec<u64>,
    pub assets: Vec<Arc<str>>,
}

/// Parses the id columns from the leading bytes of a segment block
/// (frame head included).
pub fn decode_segment_prefix(bytes: &[u8]) -> Result<SegmentPrefix, String> {
    if bytes.len() < FRAME_HEAD + SEGMENT_FIXED || bytes[0] != BlockKind::Segment as u8 {
        return Err("not a segment block".into());
    }
    let p = &bytes[FRAME_HEAD..];
    let partition = u32::from_le_bytes(p[0..4].try_into().unwrap());
    let n = u32::from_le_bytes(p[4..8].try_into().unwrap()) as usize;
    let assets_len = u32::from_le_bytes(p[8..12].try_into().unwrap()) as usize;
    let need = SEGMENT_FIXED + 8 * n + assets_len;
    if p.len() < need {
        return Err("truncated segment prefix".into());
    }
    let ids = p[SEGMENT_FIXED..SEGMENT_FIXED + 8 * n]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut assets = Vec::with_capacity(n);
    let mut pos = SEGMENT_FIXED + 8 * n;
    for _ in 0..n {
        if pos + 2 > need {
            return Err("truncated asset id".into());
        }
        let len = u16::from_le_bytes(p[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if pos + len > need {
            return Err("truncated asset id".into());
        }
        let s = std::str::from_utf8(&p[pos..pos + len]).map_err(|_| "asset id is not utf-8".to_string())?;
        assets.push(Arc::from(s));
        pos += len;
    }
    Ok(SegmentPrefix {
        partition,
        ids,
        assets,
    })
}

pub fn decode_f32s(bytes: &[u8], out: &mut Vec<f32>) {
    out.clear();
    out.extend(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
    );
}

/// Fully decoded segment.
#[derive(Debug)]
pub struct Segment {
    pub ids: Vec<u64>,
    pub assets: Vec<Arc<str>>,
    pub embeddings: Vec<f32>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn approx_bytes(&self) -> usize {
        self.ids.len() * 8 + self.embeddings.len() * 4 + self.assets.iter().map(|a| a.len() + 16).sum::<usize>() + 64
    }
}

pub fn decode_segment(block: &[u8], dim: usize) -> Result<Segment, String> {
    unframe(BlockKind::Segment, block)?;
    let prefix = decode_segment_prefix(block)?;
    let n = prefix.ids.len();
    let assets_len = u32::from_le_bytes(block[FRAME_HEAD + 8..FRAME_HEAD + 12].try_into().unwrap()) as usize;
    let start = FRAME_HEAD + SEGMENT_FIXED + 8 * n + assets_len;
    let end = start + 4 * n * dim;
    if end + FRAME_TAIL != block.len() {
        return Err("segment embedding run has wrong length".into());
    }
    let mut embeddings = Vec::new();
    decode_f32s(&block[start..end], &mut embeddings);
    Ok(Segment {
        ids: prefix.ids,
        assets: prefix.assets,
        embeddings,
    })
}

pub fn encode_centroids(ids: &[u32], data: &[f32], dim: usize) -> Vec<u8> {
    let mut p = Vec::with_capacity(8 + ids.len() * 4 + data.len() * 4);
    p.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    p.extend_from_slice(&(dim as u32).to_le_bytes());
    for id in ids {
        p.extend_from_slice(&id.to_le_bytes());
    }
    for x in data {
        p.extend_from_slice(&x.to_le_bytes());
    }
    frame(BlockKind::Centroids, &p)
}

pub fn decode_centroids(block: &[u8], dim: usize) -> Result<(Vec<u32>, Vec<f32>), String> {
    let p = unframe(BlockKind::Centroids, block)?;
    if p.len() < 8 {
        return Err("truncated centroid table".into());
    }
    let k = u32::from_le_bytes(p[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(p[4..8].try_into().unwrap()) as usize;
    if d != dim {
        return Err(format!("centroid dimension {d} does not match store dimension {dim}"));
    }
    if p.len() != 8 + 4 * k + 4 * k * dim {
        return Err("centroid table length mismatch".into());
    }
    let ids = p[8..8 + 4 * k]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut data = Vec::new();
    decode_f32s(&p[8 + 4 * k..], &mut data);
    Ok((ids, data))
}
