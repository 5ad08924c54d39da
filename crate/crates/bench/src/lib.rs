//! Seeded inputs shared by the benchmarks.

use robw_core::memory::{estimate_b_memory, estimate_output_memory, MatrixStats};
use robw_core::synth::{random_sparse, symmetric_adjacency};
use robw_core::{CscMatrix, CsrMatrix, ElementSizes};

pub const SEED: u64 = 0x5eed;

/// Graph `A` and `B = A` in CSC, the aggregation-style product.
pub fn graph_square(n: usize, density: f64) -> (CsrMatrix, CscMatrix) {
    let a = symmetric_adjacency(n, density, SEED).expect("valid density");
    let b = a.to_csc();
    (a, b)
}

/// Square `A` against a narrow `B`, so `B` stays small next to the `A` stream.
pub fn tall_skinny(n: usize, density: f64, width: usize) -> (CsrMatrix, CscMatrix) {
    let a = random_sparse(n, n, density, SEED).expect("valid density");
    let b = random_sparse(n, width, 0.1, SEED + 1).expect("valid density").to_csc();
    (a, b)
}

/// Device bytes left for `A` segments once B and the C estimate are reserved,
/// scaled by `fraction` of the `A` stream.
pub fn budget_for(a: &CsrMatrix, b: &CscMatrix, sizes: ElementSizes, fraction: f64) -> u64 {
    let m_c = estimate_output_memory(&MatrixStats::of_csr(a, sizes), &MatrixStats::of_csc(b, sizes));
    let m_b = estimate_b_memory(&MatrixStats::of_csc(b, sizes));
    m_c + m_b + (a.byte_size(sizes) as f64 * fraction).ceil() as u64
}
