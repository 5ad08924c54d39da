//! Row-block SpGEMM: `C_p = A_p * B` with `A_p` in CSR and `B` in CSC.
//!
//! Each output entry `C[i, j]` is the sorted-list intersection of row `i` of
//! `A` with column `j` of `B`, accumulated in ascending inner index. The
//! kernel runs in two passes: a symbolic pass counts output entries (and
//! matched products) per row, the output is allocated to exactly that size,
//! then the numeric pass fills it. Columns of `B` are visited in tiles so one
//! tile stays hot while a chunk of `A` rows sweeps over it.
//!
//! A structural match whose products cancel to `0.0` is still stored, which
//! keeps both passes in agreement.

use crate::partition::RobwSegment;
use crate::sparse::{CscMatrix, CsrMatrix, DenseMatrix};
use rayon::prelude::*;
use std::ops::Range;
use thiserror::Error;

/// Rows handed to one rayon task.
const ROW_CHUNK: usize = 64;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SpgemmError {
    #[error("cannot multiply {left_rows}x{left_cols} by {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    /// Number of `B` columns per tile.
    pub tile_width: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { tile_width: 256 }
    }
}

/// Borrowed CSR rows. `row_ptr` need not start at zero, so a sub-range of a
/// larger matrix can be viewed without copying.
#[derive(Debug, Clone, Copy)]
pub struct CsrRows<'a> {
    n_cols: usize,
    row_ptr: &'a [usize],
    col_idx: &'a [usize],
    values: &'a [f64],
}

impl<'a> CsrRows<'a> {
    pub fn new(n_cols: usize, row_ptr: &'a [usize], col_idx: &'a [usize], values: &'a [f64]) -> Self {
        Self {
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn of(a: &'a CsrMatrix) -> Self {
        Self::new(a.n_cols(), a.row_ptr(), a.col_idx(), a.values())
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Rows `range` of this view.
    pub fn sub(&self, range: Range<usize>) -> CsrRows<'a> {
        CsrRows {
            row_ptr: &self.row_ptr[range.start..=range.end],
            ..*self
        }
    }

    fn row(&self, i: usize) -> (&'a [usize], &'a [f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }
}

/// Per-row output sizes from the symbolic pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolicPlan {
    /// Output nonzeros of each row.
    pub row_nnz: Vec<usize>,
    /// Matched index pairs (multiply-accumulates) of each row.
    pub row_flops: Vec<u64>,
}

impl SymbolicPlan {
    pub fn nnz(&self) -> usize {
        self.row_nnz.iter().sum()
    }

    pub fn flops(&self) -> u64 {
        self.row_flops.iter().sum()
    }

    pub fn nnz_in(&self, rows: Range<usize>) -> usize {
        self.row_nnz[rows].iter().sum()
    }

    pub fn flops_in(&self, rows: Range<usize>) -> u64 {
        self.row_flops[rows].iter().sum()
    }
}

/// One block of output rows produced from one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrBlockResult {
    pub start_row: usize,
    pub end_row: usize,
    pub block: CsrMatrix,
    pub flops: u64,
}

fn check_dims(a_rows: usize, a_cols: usize, b: &CscMatrix) -> Result<(), SpgemmError> {
    if a_cols != b.n_rows() {
        return Err(SpgemmError::DimensionMismatch {
            left_rows: a_rows,
            left_cols: a_cols,
            right_rows: b.n_rows(),
            right_cols: b.n_cols(),
        });
    }
    Ok(())
}

/// Matched pairs of two sorted index lists.
#[inline]
fn intersect_count(ai: &[usize], bi: &[usize]) -> u64 {
    if disjoint_ranges(ai, bi) {
        return 0;
    }
    let (mut p, mut q, mut hits) = (0, 0, 0);
    while p < ai.len() && q < bi.len() {
        match ai[p].cmp(&bi[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                hits += 1;
                p += 1;
                q += 1;
            }
        }
    }
    hits
}

/// Dot product over matched indices, summed in ascending index order.
#[inline]
fn intersect_dot(ai: &[usize], av: &[f64], bi: &[usize], bv: &[f64]) -> Option<f64> {
    if disjoint_ranges(ai, bi) {
        return None;
    }
    let (mut p, mut q) = (0, 0);
    let mut acc = 0.0;
    let mut hit = false;
    while p < ai.len() && q < bi.len() {
        match ai[p].cmp(&bi[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                acc += av[p] * bv[q];
                hit = true;
                p += 1;
                q += 1;
            }
        }
    }
    hit.then_some(acc)
}

#[inline]
fn disjoint_ranges(ai: &[usize], bi: &[usize]) -> bool {
    match (ai.first(), ai.last(), bi.first(), bi.last()) {
        (Some(&a0), Some(&a1), Some(&b0), Some(&b1)) => a1 < b0 || b1 < a0,
        _ => true,
    }
}

fn tiles(n_cols: usize, width: usize) -> impl Iterator<Item = Range<usize>> {
    let width = width.max(1);
    (0..n_cols.div_ceil(width)).map(move |t| t * width..((t + 1) * width).min(n_cols))
}

fn chunks(n_rows: usize) -> Vec<Range<usize>> {
    (0..n_rows.div_ceil(ROW_CHUNK))
        .map(|c| c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n_rows))
        .collect()
}

/// Counts output entries and products for every row of `a`.
pub fn symbolic(a: CsrRows<'_>, b: &CscMatrix, cfg: &KernelConfig) -> Result<SymbolicPlan, SpgemmError> {
    check_dims(a.n_rows(), a.n_cols(), b)?;
    let parts: Vec<(Vec<usize>, Vec<u64>)> = chunks(a.n_rows())
        .into_par_iter()
        .map(|rows| {
            let mut nnz = vec![0usize; rows.len()];
            let mut flops = vec![0u64; rows.len()];
            for tile in tiles(b.n_cols(), cfg.tile_width) {
                for (local, i) in rows.clone().enumerate() {
                    let (ai, _) = a.row(i);
                    if ai.is_empty() {
                        continue;
                    }
                    for j in tile.clone() {
                        let hits = intersect_count(ai, b.col(j).0);
                        if hits > 0 {
                            nnz[local] += 1;
                            flops[local] += hits;
                        }
                    }
                }
            }
            (nnz, flops)
        })
        .collect();
    let mut plan = SymbolicPlan {
        row_nnz: Vec::with_capacity(a.n_rows()),
        row_flops: Vec::with_capacity(a.n_rows()),
    };
    for (nnz, flops) in parts {
        plan.row_nnz.extend(nnz);
        plan.row_flops.extend(flops);
    }
    Ok(plan)
}

/// Fills rows `rows` of the product into storage sized by `plan`.
///
/// Returns the rows as a standalone CSR block.
pub fn numeric(
    a: CsrRows<'_>,
    b: &CscMatrix,
    plan: &SymbolicPlan,
    rows: Range<usize>,
    cfg: &KernelConfig,
) -> Result<CsrMatrix, SpgemmError> {
    check_dims(a.n_rows(), a.n_cols(), b)?;
    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    row_ptr.push(0usize);
    for i in rows.clone() {
        row_ptr.push(row_ptr.last().unwrap() + plan.row_nnz[i]);
    }
    let parts: Vec<(Vec<usize>, Vec<f64>)> = chunks(rows.len())
        .into_par_iter()
        .map(|local_chunk| {
            let global = local_chunk.start + rows.start..local_chunk.end + rows.start;
            let base = row_ptr[local_chunk.start];
            let len = row_ptr[local_chunk.end] - base;
            // exact allocation from the symbolic pass; never grown
            let mut cols = vec![0usize; len];
            let mut vals = vec![0.0f64; len];
            let mut cursor: Vec<usize> = local_chunk.clone().map(|l| row_ptr[l] - base).collect();
            for tile in tiles(b.n_cols(), cfg.tile_width) {
                for (k, i) in global.clone().enumerate() {
                    let (ai, av) = a.row(i);
                    if ai.is_empty() {
                        continue;
                    }
                    for j in tile.clone() {
                        let (bi, bv) = b.col(j);
                        if let Some(dot) = intersect_dot(ai, av, bi, bv) {
                            let slot = cursor[k];
                            cols[slot] = j;
                            vals[slot] = dot;
                            cursor[k] += 1;
                        }
                    }
                }
            }
            for (k, l) in local_chunk.clone().enumerate() {
                assert_eq!(cursor[k], row_ptr[l + 1] - base, "symbolic and numeric passes disagree");
            }
            (cols, vals)
        })
        .collect();
    let mut col_idx = Vec::with_capacity(*row_ptr.last().unwrap());
    let mut values = Vec::with_capacity(col_idx.capacity());
    for (c, v) in parts {
        col_idx.extend(c);
        values.extend(v);
    }
    Ok(CsrMatrix::from_parts_unchecked(rows.len(), b.n_cols(), row_ptr, col_idx, values))
}

/// Multiplies one row segment by `B`.
pub fn spgemm_block(a_seg: &RobwSegment, b: &CscMatrix) -> Result<CsrBlockResult, SpgemmError> {
    spgemm_block_with(a_seg, b, &KernelConfig::default())
}

pub fn spgemm_block_with(
    a_seg: &RobwSegment,
    b: &CscMatrix,
    cfg: &KernelConfig,
) -> Result<CsrBlockResult, SpgemmError> {
    let rows = a_seg.rows();
    let plan = symbolic(rows, b, cfg)?;
    let block = numeric(rows, b, &plan, 0..rows.n_rows(), cfg)?;
    Ok(CsrBlockResult {
        start_row: a_seg.start_row,
        end_row: a_seg.end_row,
        block,
        flops: plan.flops(),
    })
}

/// In-core product of the whole matrix.
pub fn spgemm_full(a: &CsrMatrix, b: &CscMatrix) -> Result<CsrMatrix, SpgemmError> {
    spgemm_full_with(a, b, &KernelConfig::default())
}

pub fn spgemm_full_with(a: &CsrMatrix, b: &CscMatrix, cfg: &KernelConfig) -> Result<CsrMatrix, SpgemmError> {
    let rows = CsrRows::of(a);
    let plan = symbolic(rows, b, cfg)?;
    numeric(rows, b, &plan, 0..a.n_rows(), cfg)
}

/// Textbook triple loop, `k` innermost and ascending.
pub fn dense_oracle(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, SpgemmError> {
    if a.n_cols() != b.n_rows() {
        return Err(SpgemmError::DimensionMismatch {
            left_rows: a.n_rows(),
            left_cols: a.n_cols(),
            right_rows: b.n_rows(),
            right_cols: b.n_cols(),
        });
    }
    let mut c = DenseMatrix::zeros(a.n_rows(), b.n_cols());
    for i in 0..a.n_rows() {
        for j in 0..b.n_cols() {
            let mut acc = 0.0;
            for k in 0..a.n_cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, acc);
        }
    }
    Ok(c)
}
