//! Binary containers for CSR matrices and dense weights, and the result
//! checksum.
//!
//! The canonical serialization of a CSR matrix is, little-endian:
//! `n_rows, n_cols, nnz` as `u64`, the row pointers and column indices as
//! `u64`, then the values as `f64`. The on-disk container prefixes it with an
//! 8-byte magic. Checksums hash the canonical bytes with 64-bit FNV-1a.

use crate::sparse::{CsrMatrix, DenseMatrix, SparseError};
use fnv::FnvHasher;
use std::fs;
use std::hash::Hasher;
use std::io;
use std::path::Path;
use thiserror::Error;

pub const CSR_MAGIC: &[u8; 8] = b"RBWCSR01";

#[derive(Error, Debug)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("not a CSR container (bad magic)")]
    BadMagic,

    #[error("container truncated or malformed: {0}")]
    Malformed(String),

    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Canonical byte serialization of `a` (no magic).
pub fn canonical_bytes(a: &CsrMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * (a.n_rows() + 1 + 2 * a.nnz()));
    for h in [a.n_rows(), a.n_cols(), a.nnz()] {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    for &p in a.row_ptr() {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &c in a.col_idx() {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for &v in a.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn checksum(a: &CsrMatrix) -> u64 {
    fnv1a64(&canonical_bytes(a))
}

/// Checksum as 16 lowercase hex digits.
pub fn checksum_hex(a: &CsrMatrix) -> String {
    format!("{:016x}", checksum(a))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn word(&mut self) -> Result<[u8; 8], FormatError> {
        let bytes = self
            .buf
            .get(self.pos..self.pos + 8)
            .ok_or_else(|| FormatError::Malformed(format!("truncated at byte {}", self.pos)))?;
        self.pos += 8;
        Ok(bytes.try_into().unwrap())
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        self.word().map(u64::from_le_bytes)
    }

    fn usize(&mut self) -> Result<usize, FormatError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| FormatError::Malformed(format!("{v} does not fit in usize")))
    }

    fn need(&self, words: usize) -> Result<(), FormatError> {
        let have = (self.buf.len() - self.pos) / 8;
        if words > have {
            return Err(FormatError::Malformed(format!("header promises {words} words, {have} remain")));
        }
        Ok(())
    }
}

pub fn decode_canonical(buf: &[u8]) -> Result<CsrMatrix, FormatError> {
    let mut cur = Cursor { buf, pos: 0 };
    let n_rows = cur.usize()?;
    let n_cols = cur.usize()?;
    let nnz = cur.usize()?;
    let words = n_rows
        .checked_add(1)
        .and_then(|r| nnz.checked_mul(2).and_then(|x| x.checked_add(r)))
        .ok_or_else(|| FormatError::Malformed("sizes overflow".into()))?;
    cur.need(words)?;
    let row_ptr = (0..=n_rows).map(|_| cur.usize()).collect::<Result<Vec<_>, _>>()?;
    let col_idx = (0..nnz).map(|_| cur.usize()).collect::<Result<Vec<_>, _>>()?;
    let values = (0..nnz).map(|_| cur.word().map(f64::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
    if cur.pos != buf.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(CsrMatrix::try_from_parts(n_rows, n_cols, row_ptr, col_idx, values)?)
}

pub fn encode_csr(a: &CsrMatrix) -> Vec<u8> {
    let mut out = CSR_MAGIC.to_vec();
    out.extend_from_slice(&canonical_bytes(a));
    out
}

pub fn decode_csr(buf: &[u8]) -> Result<CsrMatrix, FormatError> {
    match buf.strip_prefix(CSR_MAGIC.as_slice()) {
        Some(body) => decode_canonical(body),
        None => Err(FormatError::BadMagic),
    }
}

pub fn write_csr(path: impl AsRef<Path>, a: &CsrMatrix) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_csr(a))?)
}

pub fn read_csr(path: impl AsRef<Path>) -> Result<CsrMatrix, FormatError> {
    decode_csr(&fs::read(path)?)
}

/// Dense row-major `f64` file with a `(rows, cols)` `u64` header.
pub fn encode_dense(w: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * w.data().len());
    out.extend_from_slice(&(w.n_rows() as u64).to_le_bytes());
    out.extend_from_slice(&(w.n_cols() as u64).to_le_bytes());
    for &x in w.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_dense(buf: &[u8]) -> Result<DenseMatrix, FormatError> {
    let mut cur = Cursor { buf, pos: 0 };
    let rows = cur.usize()?;
    let cols = cur.usize()?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| FormatError::Malformed("shape overflows".into()))?;
    cur.need(len)?;
    let data = (0..len).map(|_| cur.word().map(f64::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
    if cur.pos != buf.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(DenseMatrix::from_row_major(rows, cols, data)?)
}

pub fn write_dense(path: impl AsRef<Path>, w: &DenseMatrix) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_dense(w))?)
}

pub fn read_dense(path: impl AsRef<Path>) -> Result<DenseMatrix, FormatError> {
    decode_dense(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(&[0, 0, 2], &[1, 3, 0], &[1.5, -2.0, 7.0], 3, 4).unwrap()
    }

    #[test]
    fn fnv_reference_vectors() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn canonical_layout() {
        let a = sample();
        let bytes = canonical_bytes(&a);
        assert_eq!(bytes.len(), 8 * (3 + 4 + 3 + 3));
        assert_eq!(&bytes[..8], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &3u64.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 8..], &7.0f64.to_le_bytes());
    }

    #[test]
    fn container_round_trip_and_errors() {
        let a = sample();
        let buf = encode_csr(&a);
        assert_eq!(decode_csr(&buf).unwrap(), a);
        assert!(matches!(decode_csr(&buf[1..]), Err(FormatError::BadMagic)));
        assert!(matches!(decode_csr(&buf[..buf.len() - 3]), Err(FormatError::Malformed(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(decode_csr(&extra), Err(FormatError::Malformed(_))));
        // unsorted columns are rejected by the canonical check
        let mut bad = buf.clone();
        let col0 = 8 + 24 + 8 * 4;
        bad[col0..col0 + 8].copy_from_slice(&9u64.to_le_bytes());
        assert!(matches!(decode_csr(&bad), Err(FormatError::Sparse(_))));
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut buf = CSR_MAGIC.to_vec();
        for h in [u64::MAX / 4, 1, 1] {
            buf.extend_from_slice(&h.to_le_bytes());
        }
        assert!(decode_csr(&buf).is_err());
    }

    #[test]
    fn dense_round_trip_and_header() {
        let w = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[-4.0, 0.0, 6.5]]);
        let buf = encode_dense(&w);
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(decode_dense(&buf).unwrap(), w);
        assert!(decode_dense(&buf[..20]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csr");
        write_csr(&p, &sample()).unwrap();
        assert_eq!(read_csr(&p).unwrap(), sample());
    }

    proptest! {
        #[test]
        fn checksum_tracks_content(
            t in proptest::collection::vec((0usize..6, 0usize..6, -4i32..4), 0..20),
            bump in 0usize..20,
        ) {
            let rows: Vec<_> = t.iter().map(|e| e.0).collect();
            let cols: Vec<_> = t.iter().map(|e| e.1).collect();
            let vals: Vec<_> = t.iter().map(|e| e.2 as f64).collect();
            let a = CsrMatrix::from_triplets(&rows, &cols, &vals, 6, 6).unwrap();
            prop_assert_eq!(decode_csr(&encode_csr(&a)).unwrap(), a.clone());
            if a.nnz() > 0 {
                let k = bump % a.nnz();
                let mut v = a.values().to_vec();
                v[k] += 0.5;
                let b = CsrMatrix::try_from_parts(6, 6, a.row_ptr().to_vec(), a.col_idx().to_vec(), v).unwrap();
                prop_assert_ne!(checksum(&a), checksum(&b));
            }
        }
    }
}
