//! `.fvecs` / `.ivecs` files: repeated `[i32 LE d][d x 4-byte LE element]`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Streaming reader; every record must share the first record's width.
pub struct VecReader<R, T> {
    inner: R,
    offset: u64,
    dim: Option<usize>,
    decode: fn([u8; 4]) -> T,
    done: bool,
}

pub type FvecsReader<R> = VecReader<R, f32>;
pub type IvecsReader<R> = VecReader<R, i32>;

impl<R: Read> VecReader<R, f32> {
    pub fn fvecs(inner: R) -> Self {
        VecReader::new(inner, f32::from_le_bytes)
    }
}

impl<R: Read> VecReader<R, i32> {
    pub fn ivecs(inner: R) -> Self {
        VecReader::new(inner, i32::from_le_bytes)
    }
}

impl<R: Read, T> VecReader<R, T> {
    fn new(inner: R, decode: fn([u8; 4]) -> T) -> Self {
        Self {
            inner,
            offset: 0,
            dim: None,
            decode,
            done: false,
        }
    }

    /// Width of the records read so far.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Bytes consumed.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn malformed(&mut self, at: u64, reason: impl Into<String>) -> Error {
        self.done = true;
        Error::Malformed {
            offset: at,
            reason: reason.into(),
        }
    }

    fn read_record(&mut self) -> Result<Option<Vec<T>>> {
        let start = self.offset;
        let mut head = [0u8; 4];
        let got = read_full(&mut self.inner, &mut head)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(self.malformed(start, "truncated dimension header"));
        }
        let d = i32::from_le_bytes(head);
        if d <= 0 {
            return Err(self.malformed(start, format!("record dimension {d} is not positive")));
        }
        let d = d as usize;
        match self.dim {
            None => self.dim = Some(d),
            Some(dim) if dim != d => {
                return Err(self.malformed(start, format!("record dimension {d} differs from {dim}")));
            }
            Some(_) => {}
        }
        let mut body = vec![0u8; d * 4];
        let got = read_full(&mut self.inner, &mut body)?;
        if got < body.len() {
            return Err(self.malformed(start, format!("truncated record: {got} of {} bytes", body.len())));
        }
        self.offset += 4 + body.len() as u64;
        Ok(Some(
            body.chunks_exact(4)
                .map(|c| (self.decode)(c.try_into().unwrap()))
                .collect(),
        ))
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read, T> Iterator for VecReader<R, T> {
    type Item = Result<Vec<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(v)) => Some(Ok(v)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn open_fvecs(path: impl AsRef<Path>) -> Result<FvecsReader<BufReader<File>>> {
    Ok(VecReader::fvecs(BufReader::new(File::open(path)?)))
}

pub fn open_ivecs(path: impl AsRef<Path>) -> Result<IvecsReader<BufReader<File>>> {
    Ok(VecReader::ivecs(BufReader::new(File::open(path)?)))
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    open_fvecs(path)?.collect()
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    open_ivecs(path)?.collect()
}

fn write_records<T: Copy>(path: &Path, rows: &[impl AsRef<[T]>], enc: fn(T) -> [u8; 4]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        let r = r.as_ref();
        w.write_all(&(r.len() as i32).to_le_bytes())?;
        for &x in r {
            w.write_all(&enc(x))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, rows: &[impl AsRef<[f32]>]) -> Result<()> {
    write_records(path.as_ref(), rows, f32::to_le_bytes)
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[impl AsRef<[i32]>]) -> Result<()> {
    write_records(path.as_ref(), rows, i32::to_le_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fvecs");
        let rows: Vec<Vec<f32>> = (0..10).map(|i| (0..128).map(|j| (i * j) as f32).collect()).collect();
        write_fvecs(&p, &rows).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 10 * (4 + 128 * 4));
        assert_eq!(read_fvecs(&p).unwrap(), rows);
        let q = dir.path().join("g.ivecs");
        write_ivecs(&q, &[vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        assert_eq!(read_ivecs(&q).unwrap(), vec![vec![1, 2, 3], vec![4, 5, 6]]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&1f32.to_le_bytes());
        bytes.extend_from_slice(&2f32.to_le_bytes());
        bytes.extend_from_slice(&3i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 12]);
        let got: Vec<_> = VecReader::fvecs(&bytes[..]).collect();
        assert!(got[0].is_ok());
        assert!(matches!(got[1], Err(Error::Malformed { offset: 12, .. })));
        assert_eq!(got.len(), 2);

        let mut trunc = Vec::new();
        trunc.extend_from_slice(&4i32.to_le_bytes());
        trunc.extend_from_slice(&[0u8; 7]);
        let got: Vec<_> = VecReader::fvecs(&trunc[..]).collect();
        assert!(matches!(got[0], Err(Error::Malformed { offset: 0, .. })));
        let neg = (-1i32).to_le_bytes();
        assert!(matches!(VecReader::fvecs(&neg[..]).next(), Some(Err(Error::Malformed { .. }))));
        assert!(VecReader::fvecs(&[][..]).next().is_none());
    }
}
