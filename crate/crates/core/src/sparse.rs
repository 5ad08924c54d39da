//! Compressed sparse row / column containers and a dense fallback.
//!
//! Every constructor yields canonical storage: column (or row) indices are
//! strictly increasing inside each row (or column), and there are no
//! duplicate coordinates. Downstream kernels rely on this.

use crate::memory::ElementSizes;
use thiserror::Error;

/// Largest dense matrix (in elements) that [`CsrMatrix::to_dense`] will build.
pub const DEFAULT_DENSE_CAP: usize = 100_000_000;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SparseError {
    #[error("index ({row}, {col}) out of range for {n_rows}x{n_cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("triplet arrays differ in length: rows={rows} cols={cols} vals={vals}")]
    LengthMismatch { rows: usize, cols: usize, vals: usize },

    #[error("malformed compressed storage: {0}")]
    Malformed(String),

    #[error("dense form of {n_rows}x{n_cols} exceeds cap of {cap} elements")]
    DenseTooLarge {
        n_rows: usize,
        n_cols: usize,
        cap: usize,
    },
}

/// Compressed sparse row matrix with 64-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Compressed sparse column matrix with 64-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Row-major dense matrix, used as the verification oracle representation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

/// Checks the compressed invariants shared by CSR and CSC.
fn validate_compressed(
    n_major: usize,
    n_minor: usize,
    ptr: &[usize],
    idx: &[usize],
    values: &[f64],
) -> Result<(), SparseError> {
    if ptr.len() != n_major + 1 {
        return Err(SparseError::Malformed(format!(
            "pointer array has length {}, expected {}",
            ptr.len(),
            n_major + 1
        )));
    }
    if ptr[0] != 0 {
        return Err(SparseError::Malformed("pointer array must start at 0".into()));
    }
    if idx.len() != values.len() || ptr[n_major] != idx.len() {
        return Err(SparseError::Malformed(format!(
            "nnz mismatch: last pointer {}, {} indices, {} values",
            ptr[n_major],
            idx.len(),
            values.len()
        )));
    }
    for m in 0..n_major {
        let (lo, hi) = (ptr[m], ptr[m + 1]);
        if lo > hi {
            return Err(SparseError::Malformed(format!("pointer decreases at {m}")));
        }
        let lane = &idx[lo..hi];
        if let Some(&last) = lane.last() {
            if last >= n_minor {
                return Err(SparseError::Malformed(format!(
                    "index {last} out of range {n_minor} in lane {m}"
                )));
            }
        }
        if lane.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SparseError::Malformed(format!(
                "indices not strictly increasing in lane {m}"
            )));
        }
    }
    Ok(())
}

/// Bytes of one compressed matrix: pointer array, index array, value array.
fn compressed_bytes(n_major: usize, nnz: usize, sizes: ElementSizes) -> u64 {
    let i = sizes.index_bytes();
    let v = sizes.value_bytes();
    (n_major as u64 + 1) * i + nnz as u64 * (i + v)
}

impl CsrMatrix {
    /// Builds a CSR matrix from raw arrays, rejecting non-canonical input.
    pub fn try_from_parts(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        validate_compressed(n_rows, n_cols, &row_ptr, &col_idx, &values)?;
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Caller guarantees canonical form. Checked in debug builds.
    pub(crate) fn from_parts_unchecked(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert!(validate_compressed(n_rows, n_cols, &row_ptr, &col_idx, &values).is_ok());
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Assembles a canonical matrix from coordinate triplets.
    ///
    /// Duplicate coordinates are summed. Entries whose final sum is exactly
    /// `0.0` are dropped.
    pub fn from_triplets(
        rows: &[usize],
        cols: &[usize],
        vals: &[f64],
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self, SparseError> {
        if rows.len() != cols.len() || rows.len() != vals.len() {
            return Err(SparseError::LengthMismatch {
                rows: rows.len(),
                cols: cols.len(),
                vals: vals.len(),
            });
        }
        for (&r, &c) in rows.iter().zip(cols) {
            if r >= n_rows || c >= n_cols {
                return Err(SparseError::IndexOutOfRange {
                    row: r,
                    col: c,
                    n_rows,
                    n_cols,
                });
            }
        }

        // Bucket by row, keeping input order inside a row so duplicate sums
        // are accumulated in a reproducible order.
        let mut counts = vec![0usize; n_rows + 1];
        for &r in rows {
            counts[r + 1] += 1;
        }
        for r in 0..n_rows {
            counts[r + 1] += counts[r];
        }
        let mut cursor = counts.clone();
        let mut order = vec![0usize; rows.len()];
        for (t, &r) in rows.iter().enumerate() {
            order[cursor[r]] = t;
            cursor[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..n_rows {
            scratch.clear();
            scratch.extend(order[counts[r]..counts[r + 1]].iter().map(|&t| (cols[t], vals[t])));
            // stable: duplicates keep input order
            scratch.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut sum = scratch[k].1;
                k += 1;
                while k < scratch.len() && scratch[k].0 == c {
                    sum += scratch[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    col_idx.push(c);
                    values.push(sum);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self::from_parts_unchecked(n_rows, n_cols, row_ptr, col_idx, values))
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self::from_parts_unchecked(n_rows, n_cols, vec![0; n_rows + 1], Vec::new(), Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_parts_unchecked(n, n, (0..=n).collect(), (0..n).collect(), vec![1.0; n])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Coordinate triplets in row-major order.
    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n_rows)
            .flat_map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
            })
            .collect()
    }

    /// Transposes storage order without changing the logical matrix.
    pub fn to_csc(&self) -> CscMatrix {
        let (col_ptr, row_idx, values) =
            transpose_compressed(self.n_rows, self.n_cols, &self.row_ptr, &self.col_idx, &self.values);
        CscMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// The logical transpose, as CSR.
    pub fn transpose(&self) -> CsrMatrix {
        let (row_ptr, col_idx, values) =
            transpose_compressed(self.n_rows, self.n_cols, &self.row_ptr, &self.col_idx, &self.values);
        CsrMatrix::from_parts_unchecked(self.n_cols, self.n_rows, row_ptr, col_idx, values)
    }

    pub fn to_dense(&self) -> Result<DenseMatrix, SparseError> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseMatrix, SparseError> {
        let too_large = SparseError::DenseTooLarge {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            cap,
        };
        let len = self.n_rows.checked_mul(self.n_cols).ok_or(too_large.clone())?;
        if len > cap {
            return Err(too_large);
        }
        let mut dense = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                dense.set(r, c, v);
            }
        }
        Ok(dense)
    }

    /// Bytes of the row-pointer, column-index and value arrays.
    pub fn byte_size(&self, sizes: ElementSizes) -> u64 {
        compressed_bytes(self.n_rows, self.nnz(), sizes)
    }

    /// Rows `[start, end)` as a standalone matrix with rebased pointers.
    pub fn slice_rows(&self, start: usize, end: usize) -> CsrMatrix {
        let base = self.row_ptr[start];
        let top = self.row_ptr[end];
        CsrMatrix::from_parts_unchecked(
            end - start,
            self.n_cols,
            self.row_ptr[start..=end].iter().map(|p| p - base).collect(),
            self.col_idx[base..top].to_vec(),
            self.values[base..top].to_vec(),
        )
    }

    /// Stacks row blocks that share a column count, in order.
    pub fn vstack(n_cols: usize, blocks: &[CsrMatrix]) -> Result<CsrMatrix, SparseError> {
        let n_rows = blocks.iter().map(|b| b.n_rows).sum();
        let nnz = blocks.iter().map(|b| b.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for b in blocks {
            if b.n_cols != n_cols {
                return Err(SparseError::Malformed(format!(
                    "block has {} columns, expected {n_cols}",
                    b.n_cols
                )));
            }
            let base = col_idx.len();
            row_ptr.extend(b.row_ptr[1..].iter().map(|p| p + base));
            col_idx.extend_from_slice(&b.col_idx);
            values.extend_from_slice(&b.values);
        }
        Ok(CsrMatrix::from_parts_unchecked(n_rows, n_cols, row_ptr, col_idx, values))
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && *self == self.transpose()
    }
}

impl CscMatrix {
    pub fn try_from_parts(
        n_rows: usize,
        n_cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        validate_compressed(n_cols, n_rows, &col_ptr, &row_idx, &values)?;
        Ok(Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::identity(n).to_csc()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let span = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[span.clone()], &self.values[span])
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let (row_ptr, col_idx, values) =
            transpose_compressed(self.n_cols, self.n_rows, &self.col_ptr, &self.row_idx, &self.values);
        CsrMatrix::from_parts_unchecked(self.n_rows, self.n_cols, row_ptr, col_idx, values)
    }

    /// Bytes of the column-pointer, row-index and value arrays.
    pub fn byte_size(&self, sizes: ElementSizes) -> u64 {
        compressed_bytes(self.n_cols, self.nnz(), sizes)
    }
}

/// Counting-sort transpose of a compressed layout. Output lanes come out
/// sorted because input lanes are visited in ascending order.
fn transpose_compressed(
    n_major: usize,
    n_minor: usize,
    ptr: &[usize],
    idx: &[usize],
    values: &[f64],
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let nnz = idx.len();
    let mut out_ptr = vec![0usize; n_minor + 1];
    for &m in idx {
        out_ptr[m + 1] += 1;
    }
    for m in 0..n_minor {
        out_ptr[m + 1] += out_ptr[m];
    }
    let mut cursor = out_ptr.clone();
    let mut out_idx = vec![0usize; nnz];
    let mut out_val = vec![0.0; nnz];
    for major in 0..n_major {
        for p in ptr[major]..ptr[major + 1] {
            let slot = &mut cursor[idx[p]];
            out_idx[*slot] = major;
            out_val[*slot] = values[p];
            *slot += 1;
        }
    }
    (out_ptr, out_idx, out_val)
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self, SparseError> {
        if data.len() != n_rows * n_cols {
            return Err(SparseError::Malformed(format!(
                "dense data has {} elements, expected {}",
                data.len(),
                n_rows * n_cols
            )));
        }
        Ok(Self { n_rows, n_cols, data })
    }

    /// Convenience for small literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n_cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        Self {
            n_rows: rows.len(),
            n_cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n_cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    /// Sparse view of the nonzero entries.
    pub fn to_csr(&self) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..self.n_rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::from_parts_unchecked(self.n_rows, self.n_cols, row_ptr, col_idx, values)
    }
}
