//! One GCN forward layer: `H' = ReLU(Ã H W)` with `Ã = D^-1/2 (A + I) D^-1/2`.
//!
//! The aggregation `Ã H` is a sparse-sparse product run through the
//! scheduler (or in core); the combination with the dense weights is done
//! row by row on the sparse result.

use crate::schedule::{run, RunConfig, RunReport, ScheduleError, Strategy};
use crate::sparse::{CscMatrix, CsrMatrix, DenseMatrix};
use crate::spgemm::{spgemm_full_with, SpgemmError};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GcnError {
    #[error("adjacency must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("negative weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("cannot multiply {left_rows}x{left_cols} by {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error(transparent)]
    Schedule(ScheduleError),
}

impl From<SpgemmError> for GcnError {
    fn from(e: SpgemmError) -> Self {
        let SpgemmError::DimensionMismatch {
            left_rows,
            left_cols,
            right_rows,
            right_cols,
        } = e;
        GcnError::DimensionMismatch {
            left_rows,
            left_cols,
            right_rows,
            right_cols,
        }
    }
}

impl From<ScheduleError> for GcnError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::Spgemm(s) => s.into(),
            other => GcnError::Schedule(other),
        }
    }
}

/// How the aggregation product is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    InCore,
    Scheduled(Strategy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub a_tilde: CsrMatrix,
    /// Weighted degree of every node in `A + I`.
    pub degrees: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerSpec {
    pub feature_dim: usize,
    pub feature_sparsity_pct: f64,
    /// `feature_dim x out_features`.
    pub weight: DenseMatrix,
}

impl GcnLayerSpec {
    pub fn new(weight: DenseMatrix, feature_sparsity_pct: f64) -> Self {
        Self {
            feature_dim: weight.n_rows(),
            feature_sparsity_pct,
            weight,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub h_next: CsrMatrix,
    /// Report of the scheduled aggregation; `None` for in-core runs.
    pub report: Option<RunReport>,
}

pub fn normalize_adjacency(a: &CsrMatrix) -> Result<NormalizedAdjacency, GcnError> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(GcnError::NonSquare { rows: n, cols: a.n_cols() });
    }
    let mut rows = Vec::with_capacity(a.nnz() + n);
    let mut cols = Vec::with_capacity(a.nnz() + n);
    let mut vals = Vec::with_capacity(a.nnz() + n);
    for (r, c, v) in a.to_triplets() {
        if v.is_nan() || v < 0.0 {
            return Err(GcnError::NegativeWeight { row: r, col: c, value: v });
        }
        rows.push(r);
        cols.push(c);
        vals.push(v);
    }
    for i in 0..n {
        rows.push(i);
        cols.push(i);
        vals.push(1.0);
    }
    let a_hat = CsrMatrix::from_triplets(&rows, &cols, &vals, n, n).expect("indices in range");
    let degrees: Vec<f64> = (0..n).map(|i| a_hat.row(i).1.iter().sum()).collect();
    // divide by sqrt(d_i * d_j) rather than multiplying two inverse roots:
    // symmetric in i, j and exact on perfect squares
    let scaled: Vec<f64> = (0..n)
        .flat_map(|i| {
            let (ci, vi) = a_hat.row(i);
            let degrees = &degrees;
            ci.iter().zip(vi).map(move |(&j, &v)| v / (degrees[i] * degrees[j]).sqrt())
        })
        .collect();
    let a_tilde = CsrMatrix::try_from_parts(n, n, a_hat.row_ptr().to_vec(), a_hat.col_idx().to_vec(), scaled)
        .expect("same structure as A + I");
    Ok(NormalizedAdjacency { a_tilde, degrees })
}

/// `X = Ã H`.
pub fn aggregate(
    n: &NormalizedAdjacency,
    h: &CscMatrix,
    engine: Engine,
    cfg: &RunConfig,
) -> Result<(CsrMatrix, Option<RunReport>), GcnError> {
    match engine {
        Engine::InCore => Ok((spgemm_full_with(&n.a_tilde, h, &cfg.kernel)?, None)),
        Engine::Scheduled(strategy) => {
            let out = run(strategy, &n.a_tilde, h, cfg)?;
            Ok((out.c, Some(out.report)))
        }
    }
}

/// `ReLU(X W)`, keeping only strictly positive entries.
pub fn combine(x: &CsrMatrix, w: &DenseMatrix) -> Result<CsrMatrix, GcnError> {
    if x.n_cols() != w.n_rows() {
        return Err(GcnError::DimensionMismatch {
            left_rows: x.n_rows(),
            left_cols: x.n_cols(),
            right_rows: w.n_rows(),
            right_cols: w.n_cols(),
        });
    }
    let out_cols = w.n_cols();
    let mut row_ptr = Vec::with_capacity(x.n_rows() + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut acc = vec![0.0f64; out_cols];
    row_ptr.push(0);
    for i in 0..x.n_rows() {
        acc.fill(0.0);
        let (ks, vs) = x.row(i);
        for (&k, &v) in ks.iter().zip(vs) {
            for (a, &wk) in acc.iter_mut().zip(w.row(k)) {
                *a += v * wk;
            }
        }
        for (j, &a) in acc.iter().enumerate() {
            if a > 0.0 {
                col_idx.push(j);
                values.push(a);
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrMatrix::try_from_parts(x.n_rows(), out_cols, row_ptr, col_idx, values).expect("built in order"))
}

pub fn layer_forward(
    a: &CsrMatrix,
    h: &CscMatrix,
    spec: &GcnLayerSpec,
    engine: Engine,
    cfg: &RunConfig,
) -> Result<LayerOutput, GcnError> {
    if h.n_cols() != spec.weight.n_rows() || spec.feature_dim != spec.weight.n_rows() {
        return Err(GcnError::DimensionMismatch {
            left_rows: h.n_rows(),
            left_cols: h.n_cols(),
            right_rows: spec.weight.n_rows(),
            right_cols: spec.weight.n_cols(),
        });
    }
    let n = normalize_adjacency(a)?;
    let (x, report) = aggregate(&n, h, engine, cfg)?;
    Ok(LayerOutput {
        h_next: combine(&x, &spec.weight)?,
        report,
    })
}
