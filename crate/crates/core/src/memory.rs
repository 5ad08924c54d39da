//! Analytic device-memory estimators for out-of-core SpGEMM.
//!
//! `estimate_output_memory` approximates the bytes of the output `C`,
//! `estimate_b_memory` the bytes of the resident right operand `B`, and
//! `block_budget` turns what is left of the device into the per-array
//! budget for streaming `A` segments. `calc_mem` is the exact byte cost of a
//! CSR segment and is what the row-block partitioner admits against.

use crate::sparse::{CscMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("element sizes must be at least one byte (index={index}, value={value})")]
    InvalidElementSize { index: u64, value: u64 },

    #[error("insufficient device memory: {available} bytes available, more than {required} required")]
    InsufficientDeviceMemory { required: u64, available: u64 },
}

/// Byte widths of one index entry and one value entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementSizes {
    index_bytes: u64,
    value_bytes: u64,
}

impl ElementSizes {
    pub fn new(index_bytes: u64, value_bytes: u64) -> Result<Self, MemoryError> {
        if index_bytes == 0 || value_bytes == 0 {
            return Err(MemoryError::InvalidElementSize {
                index: index_bytes,
                value: value_bytes,
            });
        }
        Ok(Self {
            index_bytes,
            value_bytes,
        })
    }

    pub fn index_bytes(&self) -> u64 {
        self.index_bytes
    }

    pub fn value_bytes(&self) -> u64 {
        self.value_bytes
    }

    /// Bytes of one stored nonzero (index plus value).
    pub fn entry_bytes(&self) -> u64 {
        self.index_bytes + self.value_bytes
    }
}

impl Default for ElementSizes {
    fn default() -> Self {
        Self {
            index_bytes: 8,
            value_bytes: 8,
        }
    }
}

/// Size and density summary of one compressed operand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixStats {
    /// Total bytes of the values array.
    pub alpha: u64,
    /// Percentage of zero entries, in `[0, 100]`.
    pub sparsity_pct: f64,
    /// Bytes of the pointer array.
    pub pointer_bytes: u64,
    /// Bytes of the index array.
    pub id_bytes: u64,
}

fn sparsity_pct(nnz: usize, n_rows: usize, n_cols: usize) -> f64 {
    let cells = n_rows as f64 * n_cols as f64;
    if cells == 0.0 {
        100.0
    } else {
        100.0 * (1.0 - nnz as f64 / cells)
    }
}

impl MatrixStats {
    pub fn of_csr(a: &CsrMatrix, sizes: ElementSizes) -> Self {
        Self {
            alpha: a.nnz() as u64 * sizes.value_bytes(),
            sparsity_pct: sparsity_pct(a.nnz(), a.n_rows(), a.n_cols()),
            pointer_bytes: (a.n_rows() as u64 + 1) * sizes.index_bytes(),
            id_bytes: a.nnz() as u64 * sizes.index_bytes(),
        }
    }

    pub fn of_csc(b: &CscMatrix, sizes: ElementSizes) -> Self {
        Self {
            alpha: b.nnz() as u64 * sizes.value_bytes(),
            sparsity_pct: sparsity_pct(b.nnz(), b.n_rows(), b.n_cols()),
            pointer_bytes: (b.n_cols() as u64 + 1) * sizes.index_bytes(),
            id_bytes: b.nnz() as u64 * sizes.index_bytes(),
        }
    }
}

/// Device and host capacities plus the element widths used for accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryBudget {
    pub device_total: u64,
    pub host_total: u64,
    pub element_sizes: ElementSizes,
}

impl MemoryBudget {
    pub fn new(device_total: u64, host_total: u64, element_sizes: ElementSizes) -> Self {
        Self {
            device_total,
            host_total,
            element_sizes,
        }
    }

    pub fn with_device(&self, device_total: u64) -> Self {
        Self {
            device_total,
            ..*self
        }
    }
}

/// Output of [`block_budget`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockBudget {
    /// Per-array byte budget for each of the three CSR arrays of a segment.
    pub per_array: u64,
    /// Total device bytes available for one resident `A` segment.
    pub segment_total: u64,
}

/// Estimated device bytes of the product `C = A * B`.
///
/// Evaluated as `3 (100 - s_A) (100 (a_A + a_B) + a_A (100 - s_B)) / 10^4`,
/// which is the same quantity as the textbook form with `a_B / a_A` folded
/// into the bracket; every term stays an integer when the sparsities are
/// integers, so the rounding up below only sees representation error from
/// fractional percentages.
pub fn estimate_output_memory(a: &MatrixStats, b: &MatrixStats) -> u64 {
    if a.alpha == 0 {
        return 0;
    }
    let alpha_a = a.alpha as f64;
    let alpha_b = b.alpha as f64;
    let dens_a = 100.0 - a.sparsity_pct;
    let dens_b = 100.0 - b.sparsity_pct;
    let exact = 3.0 * dens_a * (100.0 * (alpha_a + alpha_b) + alpha_a * dens_b) / 10_000.0;
    ceil_tolerant(exact)
}

/// `ceil`, except that values within a few ulps of an integer snap to it.
fn ceil_tolerant(x: f64) -> u64 {
    if x <= 0.0 {
        return 0;
    }
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Device bytes of the resident `B` operand: values + pointers + ids.
pub fn estimate_b_memory(b: &MatrixStats) -> u64 {
    b.alpha + b.pointer_bytes + b.id_bytes
}

/// Splits what remains of the device after `C` and `B` into the budget for
/// one `A` segment.
pub fn block_budget(budget: &MemoryBudget, m_c: u64, m_b: u64) -> Result<BlockBudget, MemoryError> {
    let reserved = m_c.saturating_add(m_b);
    if budget.device_total <= reserved {
        return Err(MemoryError::InsufficientDeviceMemory {
            required: reserved,
            available: budget.device_total,
        });
    }
    let segment_total = budget.device_total - reserved;
    Ok(BlockBudget {
        per_array: segment_total / 3,
        segment_total,
    })
}

/// Bytes of a CSR segment holding `k` rows and `q` nonzeros.
pub fn calc_mem(k: u64, q: u64, sizes: ElementSizes) -> u64 {
    (k + 1) * sizes.index_bytes() + q * sizes.entry_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(alpha: u64, sparsity_pct: f64) -> MatrixStats {
        MatrixStats {
            alpha,
            sparsity_pct,
            pointer_bytes: 0,
            id_bytes: 0,
        }
    }

    #[test]
    fn output_memory_examples() {
        assert_eq!(estimate_output_memory(&stats(800, 90.0), &stats(400, 95.0)), 372);
        assert_eq!(estimate_output_memory(&stats(800, 100.0), &stats(400, 95.0)), 0);
        assert_eq!(estimate_output_memory(&stats(100, 0.0), &stats(100, 0.0)), 900);
    }

    #[test]
    fn output_memory_empty_a() {
        assert_eq!(estimate_output_memory(&stats(0, 100.0), &stats(400, 50.0)), 0);
    }

    #[test]
    fn output_memory_rounds_up_fractions() {
        // 3 * 50 * (100 * (1 + 2) + 1 * 0) / 10^4 = 4.5
        assert_eq!(estimate_output_memory(&stats(1, 50.0), &stats(2, 100.0)), 5);
    }

    #[test]
    fn b_memory_examples() {
        let b = |a, p, t| MatrixStats {
            alpha: a,
            sparsity_pct: 0.0,
            pointer_bytes: p,
            id_bytes: t,
        };
        assert_eq!(estimate_b_memory(&b(400, 100, 400)), 900);
        assert_eq!(estimate_b_memory(&b(0, 0, 0)), 0);
        assert_eq!(estimate_b_memory(&b(8, 16, 8)), 32);
    }

    #[test]
    fn block_budget_examples() {
        let m = |d| MemoryBudget::new(d, u64::MAX, ElementSizes::default());
        assert_eq!(
            block_budget(&m(2272), 372, 900).unwrap(),
            BlockBudget {
                per_array: 333,
                segment_total: 1000
            }
        );
        assert!(matches!(
            block_budget(&m(1272), 372, 900),
            Err(MemoryError::InsufficientDeviceMemory { .. })
        ));
        assert_eq!(
            block_budget(&m(3), 0, 0).unwrap(),
            BlockBudget {
                per_array: 1,
                segment_total: 3
            }
        );
    }

    #[test]
    fn calc_mem_examples() {
        let s8 = ElementSizes::default();
        assert_eq!(calc_mem(1, 0, s8), 16);
        assert_eq!(calc_mem(2, 3, s8), 72);
        assert_eq!(calc_mem(4, 9, ElementSizes::new(4, 8).unwrap()), 128);
    }

    #[test]
    fn element_sizes_reject_zero() {
        assert!(ElementSizes::new(0, 8).is_err());
        assert!(ElementSizes::new(8, 0).is_err());
    }

    #[test]
    fn stats_feed_b_memory_as_byte_size() {
        let b = CsrMatrix::from_triplets(&[0, 1, 1], &[0, 0, 2], &[1.0, 2.0, 3.0], 2, 3)
            .unwrap()
            .to_csc();
        let sizes = ElementSizes::new(4, 8).unwrap();
        assert_eq!(estimate_b_memory(&MatrixStats::of_csc(&b, sizes)), b.byte_size(sizes));
    }

    proptest! {
        #[test]
        fn output_memory_monotone(
            alpha_a in 1u64..10_000, alpha_b in 0u64..10_000,
            s_a in 0.0f64..100.0, s_b in 0.0f64..100.0,
            bump in 1u64..1000, ds in 0.0f64..10.0,
        ) {
            let base = estimate_output_memory(&stats(alpha_a, s_a), &stats(alpha_b, s_b));
            prop_assert!(estimate_output_memory(&stats(alpha_a, (s_a + ds).min(100.0)), &stats(alpha_b, s_b)) <= base);
            prop_assert!(estimate_output_memory(&stats(alpha_a, s_a), &stats(alpha_b, (s_b + ds).min(100.0))) <= base);
            prop_assert!(estimate_output_memory(&stats(alpha_a + bump, s_a), &stats(alpha_b, s_b)) >= base);
            prop_assert!(estimate_output_memory(&stats(alpha_a, s_a), &stats(alpha_b + bump, s_b)) >= base);
        }

        #[test]
        fn block_budget_floor(m in 1u64..1_000_000, m_c in 0u64..1000, m_b in 0u64..1000) {
            let budget = MemoryBudget::new(m, u64::MAX, ElementSizes::default());
            match block_budget(&budget, m_c, m_b) {
                Ok(bb) => {
                    prop_assert_eq!(bb.segment_total, m - m_c - m_b);
                    prop_assert!(3 * bb.per_array <= bb.segment_total);
                    prop_assert!(bb.segment_total < 3 * (bb.per_array + 1));
                }
                Err(_) => prop_assert!(m <= m_c + m_b),
            }
        }

        #[test]
        fn calc_mem_matches_csr_bytes(rows in prop::collection::vec(0usize..6, 1..10), i in 1u64..9, v in 1u64..9) {
            let sizes = ElementSizes::new(i, v).unwrap();
            let n_cols = 6;
            let mut r_idx = Vec::new();
            let mut c_idx = Vec::new();
            for (r, &len) in rows.iter().enumerate() {
                for c in 0..len {
                    r_idx.push(r);
                    c_idx.push(c);
                }
            }
            let vals = vec![1.0; r_idx.len()];
            let a = CsrMatrix::from_triplets(&r_idx, &c_idx, &vals, rows.len(), n_cols).unwrap();
            prop_assert_eq!(calc_mem(rows.len() as u64, a.nnz() as u64, sizes), a.byte_size(sizes));
        }
    }
}
