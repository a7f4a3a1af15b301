//! Commit record kept in the `-journal` sidecar.
//!
//! A transaction appends its blocks past the committed end of the main file
//! and fsyncs them. The journal then receives one fixed record naming the new
//! root and a checksum of the appended range. Once the record is durable the
//! transaction is committed: the header rewrite that follows is a redo step
//! that replay repeats if it was lost or torn.
//!
//! ```text
//!  0 "MVJL"
//!  4 version        u32
//!  8 txn id         u64
//! 16 root offset    u64
//! 24 root length    u32
//! 28 dimension      u32
//! 32 body start     u64
//! 40 body end       u64
//! 48 body crc32     u32
//! 52 metric tag     u8, 3 reserved
//! 56 crc32 of [0, 56) u32
//! 60 "CMIT"
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::format::Header;
use crate::kernel::Metric;
use crate::Result;

pub const JOURNAL_MAGIC: &[u8; 4] = b"MVJL";
pub const COMMIT_MARK: &[u8; 4] = b"CMIT";
pub const RECORD_LEN: usize = 64;
const JOURNAL_VERSION: u32 = 1;

pub fn journal_path(main: &Path) -> PathBuf {
    let mut s = main.as_os_str().to_os_string();
    s.push("-journal");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitRecord {
    pub header: Header,
    pub body_start: u64,
    pub body_end: u64,
    pub body_crc: u32,
}

impl CommitRecord {
    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let h = &self.header;
        let mut b = [0u8; RECORD_LEN];
        b[0..4].copy_from_slice(JOURNAL_MAGIC);
        b[4..8].copy_from_slice(&JOURNAL_VERSION.to_le_bytes());
        b[8..16].copy_from_slice(&h.txn_id.to_le_bytes());
        b[16..24].copy_from_slice(&h.root_offset.to_le_bytes());
        b[24..28].copy_from_slice(&h.root_len.to_le_bytes());
        b[28..32].copy_from_slice(&h.dimension.to_le_bytes());
        b[32..40].copy_from_slice(&self.body_start.to_le_bytes());
        b[40..48].copy_from_slice(&self.body_end.to_le_bytes());
        b[48..52].copy_from_slice(&self.body_crc.to_le_bytes());
        b[52] = h.metric.tag();
        let crc = crc32fast::hash(&b[0..56]);
        b[56..60].copy_from_slice(&crc.to_le_bytes());
        b[60..64].copy_from_slice(COMMIT_MARK);
        b
    }

    /// `None` for anything but a complete, checksummed record.
    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != RECORD_LEN || &b[0..4] != JOURNAL_MAGIC || &b[60..64] != COMMIT_MARK {
            return None;
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        if u32_at(4) != JOURNAL_VERSION || u32_at(56) != crc32fast::hash(&b[0..56]) {
            return None;
        }
        Some(CommitRecord {
            header: Header {
                dimension: u32_at(28),
                metric: Metric::from_tag(b[52])?,
                root_offset: u64_at(16),
                root_len: u32_at(24),
                txn_id: u64_at(8),
            },
            body_start: u64_at(32),
            body_end: u64_at(40),
            body_crc: u32_at(48),
        })
    }
}

/// Crc32 of `[start, end)` of a file, streamed.
pub fn range_crc(file: &File, start: u64, end: u64) -> Result<u32> {
    let mut hasher = crc32fast::Hasher::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut pos = start;
    while pos < end {
        let n = ((end - pos) as usize).min(buf.len());
        file.read_exact_at(&mut buf[..n], pos)?;
        hasher.update(&buf[..n]);
        pos += n as u64;
    }
    Ok(hasher.finalize())
}

/// Writes `bytes` as the whole journal content and fsyncs it.
pub fn write_journal(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn clear_journal(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}

/// Reads a journal: `Ok(None)` when absent, empty or incomplete.
pub fn read_journal(path: &Path) -> Result<Option<CommitRecord>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(CommitRecord::decode(&bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> CommitRecord {
        CommitRecord {
            header: Header {
                dimension: 8,
                metric: Metric::SquaredL2,
                root_offset: 4096,
                root_len: 77,
                txn_id: 12,
            },
            body_start: 64,
            body_end: 4173,
            body_crc: 0xdead_beef,
        }
    }

    #[test]
    fn roundtrip() {
        let r = record();
        assert_eq!(CommitRecord::decode(&r.encode()), Some(r));
    }

    #[test]
    fn torn_or_flipped_records_are_rejected() {
        let b = record().encode();
        for cut in [0, 8, 32, 63] {
            assert_eq!(CommitRecord::decode(&b[..cut]), None);
        }
        for i in 0..RECORD_LEN {
            let mut bad = b;
            bad[i] ^= 0x40;
            assert_eq!(CommitRecord::decode(&bad), None, "flip at byte {i}");
        }
    }
}
