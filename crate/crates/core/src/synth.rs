//! Seeded synthetic inputs: graphs, sparse features, dense weights.
//!
//! Every generator is a pure function of its arguments; the same seed gives
//! the same matrix on every platform (ChaCha8 stream).

use crate::sparse::{CsrMatrix, DenseMatrix};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SynthError {
    #[error("density must be in (0, 1], got {0}")]
    InvalidDensity(f64),

    #[error("sparsity must be in [0, 100), got {0}")]
    InvalidSparsity(f64),
}

fn check_density(d: f64) -> Result<(), SynthError> {
    if d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(SynthError::InvalidDensity(d))
    }
}

/// Nonzero value uniform in `[-1, 1)`.
fn signed_value(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if v != 0.0 {
            return v;
        }
    }
}

/// Undirected graph on `n` nodes with unit weights.
///
/// Draws `round(density * n (n + 1) / 2)` distinct unordered pairs (self
/// pairs included) uniformly, so the stored count stays within a few entries
/// of `density * n * n` for every seed.
pub fn symmetric_adjacency(n: usize, density: f64, seed: u64) -> Result<CsrMatrix, SynthError> {
    check_density(density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = n * (n + 1) / 2;
    let edges = ((density * pairs as f64).round() as usize).min(pairs);
    let mut picked = index::sample(&mut rng, pairs, edges).into_vec();
    picked.sort_unstable();
    let mut rows = Vec::with_capacity(2 * edges);
    let mut cols = Vec::with_capacity(2 * edges);
    // pair k lives in row i of the upper triangle when
    // row_start(i) <= k < row_start(i + 1), row_start(i) = i n - i (i - 1) / 2
    let mut i = 0;
    let mut row_start = 0;
    for k in picked {
        while k >= row_start + (n - i) {
            row_start += n - i;
            i += 1;
        }
        let j = i + (k - row_start);
        rows.push(i);
        cols.push(j);
        if i != j {
            rows.push(j);
            cols.push(i);
        }
    }
    let vals = vec![1.0; rows.len()];
    Ok(CsrMatrix::from_triplets(&rows, &cols, &vals, n, n).expect("indices in range"))
}

/// Each cell is stored independently with probability `density`, with a
/// nonzero value uniform in `[-1, 1)`.
pub fn random_sparse(n_rows: usize, n_cols: usize, density: f64, seed: u64) -> Result<CsrMatrix, SynthError> {
    check_density(density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for _ in 0..n_rows {
        for j in 0..n_cols {
            if rng.gen::<f64>() < density {
                col_idx.push(j);
                values.push(signed_value(&mut rng));
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrMatrix::try_from_parts(n_rows, n_cols, row_ptr, col_idx, values).expect("generated canonically"))
}

/// Feature matrix with `sparsity_pct` percent zeros.
pub fn random_features(n: usize, dim: usize, sparsity_pct: f64, seed: u64) -> Result<CsrMatrix, SynthError> {
    if !(0.0..100.0).contains(&sparsity_pct) {
        return Err(SynthError::InvalidSparsity(sparsity_pct));
    }
    random_sparse(n, dim, 1.0 - sparsity_pct / 100.0, seed)
}

/// Dense matrix with entries uniform in `[-1, 1)`.
pub fn random_dense(n_rows: usize, n_cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_rows * n_cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::from_row_major(n_rows, n_cols, data).expect("shape matches")
}
