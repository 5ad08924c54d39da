//! Splitting a CSR operand into device-sized pieces.
//!
//! [`robw_partition`] cuts only at row boundaries: every segment carries whole
//! rows and the greedy admission test is the exact segment byte size
//! ([`calc_mem`]). [`maxmemory_partition`] is the naive baseline that fills
//! each transfer to the byte, so split points routinely land inside a row and
//! the leftover fragment has to be merged with the next segment on the host.

use crate::memory::{calc_mem, ElementSizes};
use crate::sparse::CsrMatrix;
use crate::spgemm::CsrRows;
use std::ops::Range;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("row {row} needs {bytes} bytes, more than the {budget}-byte segment budget")]
    RowTooLarge { row: usize, bytes: u64, budget: u64 },

    #[error("segment budget must be positive")]
    ZeroBudget,

    #[error("fragment from segment {fragment_seg} ending at byte {fragment_end} does not precede segment {next_seg} starting at byte {next_start}")]
    NonAdjacentFragments {
        fragment_seg: usize,
        fragment_end: u64,
        next_seg: usize,
        next_start: u64,
    },

    #[error("value {value} does not fit in {width} bytes")]
    IndexOverflow { value: u64, width: u64 },

    #[error("unsupported value width {0} (expected 4 or 8)")]
    UnsupportedValueWidth(u64),

    #[error("segment container truncated or malformed: {0}")]
    Malformed(String),
}

/// One block of whole CSR rows with pointers rebased to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RobwSegment {
    pub seg_index: usize,
    pub start_row: usize,
    pub end_row: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub byte_size: u64,
}

impl RobwSegment {
    fn from_rows(a: &CsrMatrix, seg_index: usize, rows: Range<usize>, sizes: ElementSizes) -> Self {
        let local = a.slice_rows(rows.start, rows.end);
        let byte_size = calc_mem(rows.len() as u64, local.nnz() as u64, sizes);
        Self {
            seg_index,
            start_row: rows.start,
            end_row: rows.end,
            n_cols: a.n_cols(),
            row_ptr: local.row_ptr().to_vec(),
            col_idx: local.col_idx().to_vec(),
            values: local.values().to_vec(),
            byte_size,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.end_row - self.start_row
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn rows(&self) -> CsrRows<'_> {
        CsrRows::new(self.n_cols, &self.row_ptr, &self.col_idx, &self.values)
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_parts_unchecked(
            self.n_rows(),
            self.n_cols,
            self.row_ptr.clone(),
            self.col_idx.clone(),
            self.values.clone(),
        )
    }
}

/// Greedy row-block partition of `a` under a per-segment budget of `m_a`
/// bytes.
///
/// Each segment takes the longest run of remaining rows whose
/// [`calc_mem`] fits in `m_a`. Empty rows cost one pointer entry and are
/// admitted like any other row.
pub fn robw_partition(
    a: &CsrMatrix,
    m_a: u64,
    sizes: ElementSizes,
) -> Result<Vec<RobwSegment>, PartitionError> {
    let n = a.n_rows();
    let mut segments = Vec::new();
    let mut start = 0;
    while start < n {
        let first = a.row_nnz(start) as u64;
        if calc_mem(1, first, sizes) > m_a {
            return Err(PartitionError::RowTooLarge {
                row: start,
                bytes: calc_mem(1, first, sizes),
                budget: m_a,
            });
        }
        let mut end = start;
        let mut nnz = 0u64;
        // check `end < n` before looking at rp[end + 1]
        while end < n {
            let candidate = nnz + a.row_nnz(end) as u64;
            if calc_mem((end - start + 1) as u64, candidate, sizes) > m_a {
                break;
            }
            nnz = candidate;
            end += 1;
        }
        segments.push(RobwSegment::from_rows(a, segments.len(), start..end, sizes));
        start = end;
    }
    Ok(segments)
}

/// Reassembles a partition back into the matrix it came from.
pub fn reassemble(n_cols: usize, segments: &[RobwSegment]) -> CsrMatrix {
    let blocks: Vec<CsrMatrix> = segments.iter().map(RobwSegment::to_csr).collect();
    CsrMatrix::vstack(n_cols, &blocks).expect("segments share the column count")
}

/// Byte span `[byte_start, byte_end)` of the flattened (index, value)
/// stream belonging to a row that was cut by a split point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fragment {
    pub row: usize,
    pub source_seg: usize,
    pub byte_start: u64,
    pub byte_end: u64,
}

impl Fragment {
    pub fn len(&self) -> u64 {
        self.byte_end - self.byte_start
    }

    pub fn is_empty(&self) -> bool {
        self.byte_end == self.byte_start
    }
}

/// A fixed-size window over the flattened (index, value) stream of `A`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSegment {
    pub seg_index: usize,
    pub byte_start: u64,
    pub byte_end: u64,
    /// Rows that become complete once this segment is on the device.
    pub completed_rows: Range<usize>,
    /// Fragment carried in from the previous segment after a host merge.
    pub leading_partial: Option<Fragment>,
    /// Unfinished row at the end of this window, to be sent back and merged.
    pub trailing_partial: Option<Fragment>,
    /// Bytes re-staged into this segment by [`merge_partial`].
    pub merged_bytes: u64,
}

impl RawSegment {
    pub fn stream_bytes(&self) -> u64 {
        self.byte_end - self.byte_start
    }

    /// Bytes moved to the device: the stream window plus the host-derived
    /// row pointers for every row it touches.
    pub fn transfer_bytes(&self, sizes: ElementSizes) -> u64 {
        let touched = self.completed_rows.len() as u64 + u64::from(self.trailing_partial.is_some());
        self.stream_bytes() + (touched + 1) * sizes.index_bytes()
    }
}

/// Splits the (index, value) stream of `a` every `m_a` bytes, ignoring row
/// boundaries.
pub fn maxmemory_partition(
    a: &CsrMatrix,
    m_a: u64,
    sizes: ElementSizes,
) -> Result<Vec<RawSegment>, PartitionError> {
    if m_a == 0 {
        return Err(PartitionError::ZeroBudget);
    }
    let entry = sizes.entry_bytes();
    let rp = a.row_ptr();
    let n = a.n_rows();
    let start_byte = |r: usize| rp[r] as u64 * entry;
    let end_byte = |r: usize| rp[r + 1] as u64 * entry;
    let total = a.nnz() as u64 * entry;
    let n_seg = total.div_ceil(m_a).max(1) as usize;

    // Row r completes in the segment holding its last byte; an empty row
    // sits at its start offset.
    let owner = |r: usize| -> usize {
        let key = if rp[r + 1] > rp[r] {
            end_byte(r) - 1
        } else {
            start_byte(r)
        };
        ((key / m_a) as usize).min(n_seg - 1)
    };

    let mut segments = Vec::with_capacity(n_seg);
    let mut row = 0;
    for k in 0..n_seg {
        let byte_start = k as u64 * m_a;
        let byte_end = ((k as u64 + 1) * m_a).min(total);
        let first = row;
        while row < n && owner(row) == k {
            row += 1;
        }
        let trailing_partial = if k + 1 < n_seg {
            // first row ending past the split point; mid-row if it also
            // starts before it
            let (mut r, mut hi) = (0, n);
            while r < hi {
                let mid = (r + hi) / 2;
                if end_byte(mid) <= byte_end {
                    r = mid + 1;
                } else {
                    hi = mid;
                }
            }
            (r < n && start_byte(r) < byte_end).then(|| Fragment {
                row: r,
                source_seg: k,
                byte_start: start_byte(r),
                byte_end,
            })
        } else {
            None
        };
        segments.push(RawSegment {
            seg_index: k,
            byte_start,
            byte_end,
            completed_rows: first..row,
            leading_partial: None,
            trailing_partial,
            merged_bytes: 0,
        });
    }
    debug_assert_eq!(row, n);
    Ok(segments)
}

/// Prepends the fragment cut from the previous segment to `next`.
pub fn merge_partial(prev_trailing: &Fragment, next: RawSegment) -> Result<RawSegment, PartitionError> {
    if prev_trailing.is_empty() {
        return Ok(next);
    }
    if prev_trailing.byte_end != next.byte_start || prev_trailing.source_seg + 1 != next.seg_index {
        return Err(PartitionError::NonAdjacentFragments {
            fragment_seg: prev_trailing.source_seg,
            fragment_end: prev_trailing.byte_end,
            next_seg: next.seg_index,
            next_start: next.byte_start,
        });
    }
    Ok(RawSegment {
        byte_start: prev_trailing.byte_start,
        leading_partial: Some(*prev_trailing),
        merged_bytes: next.merged_bytes + prev_trailing.len(),
        ..next
    })
}

/// Total merge bytes a MaxMemory run over `segments` re-stages.
pub fn total_merge_bytes(segments: &[RawSegment]) -> u64 {
    segments
        .iter()
        .filter_map(|s| s.trailing_partial)
        .map(|f| f.len())
        .sum()
}

const SEGMENT_HEADER_BYTES: usize = 32;

fn put_uint(out: &mut Vec<u8>, value: u64, width: u64) -> Result<(), PartitionError> {
    if width < 8 && value >> (8 * width) != 0 {
        return Err(PartitionError::IndexOverflow { value, width });
    }
    let bytes = value.to_le_bytes();
    let w = width as usize;
    if w <= 8 {
        out.extend_from_slice(&bytes[..w]);
    } else {
        out.extend_from_slice(&bytes);
        out.resize(out.len() + w - 8, 0);
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], PartitionError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| PartitionError::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn uint(&mut self, width: u64) -> Result<u64, PartitionError> {
        let raw = self.take(width as usize)?;
        let mut b = [0u8; 8];
        let keep = raw.len().min(8);
        b[..keep].copy_from_slice(&raw[..keep]);
        if raw[keep..].iter().any(|&x| x != 0) {
            return Err(PartitionError::Malformed("index wider than 64 bits".into()));
        }
        Ok(u64::from_le_bytes(b))
    }
}

/// Serializes a segment for the storage tier.
///
/// Layout, little-endian: `seg_index, start_row, end_row, nnz` as `u64`,
/// then the row pointers, column indices (both `index_bytes` wide) and the
/// values (`value_bytes` wide, `f32` or `f64`).
pub fn encode_segment(seg: &RobwSegment, sizes: ElementSizes) -> Result<Vec<u8>, PartitionError> {
    let v = sizes.value_bytes();
    if v != 4 && v != 8 {
        return Err(PartitionError::UnsupportedValueWidth(v));
    }
    let i = sizes.index_bytes();
    let mut out = Vec::with_capacity(SEGMENT_HEADER_BYTES + seg.byte_size as usize);
    for h in [seg.seg_index, seg.start_row, seg.end_row, seg.nnz()] {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    for &p in &seg.row_ptr {
        put_uint(&mut out, p as u64, i)?;
    }
    for &c in &seg.col_idx {
        put_uint(&mut out, c as u64, i)?;
    }
    for &x in &seg.values {
        if v == 8 {
            out.extend_from_slice(&x.to_le_bytes());
        } else {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_segment(buf: &[u8], sizes: ElementSizes, n_cols: usize) -> Result<RobwSegment, PartitionError> {
    let v = sizes.value_bytes();
    if v != 4 && v != 8 {
        return Err(PartitionError::UnsupportedValueWidth(v));
    }
    let i = sizes.index_bytes();
    let mut r = Reader { buf, pos: 0 };
    let seg_index = r.uint(8)? as usize;
    let start_row = r.uint(8)? as usize;
    let end_row = r.uint(8)? as usize;
    let nnz = r.uint(8)? as usize;
    if end_row < start_row {
        return Err(PartitionError::Malformed("end_row precedes start_row".into()));
    }
    let k = end_row - start_row;
    let row_ptr = (0..=k).map(|_| r.uint(i).map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?;
    let col_idx = (0..nnz).map(|_| r.uint(i).map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?;
    let values = (0..nnz)
        .map(|_| {
            r.take(v as usize).map(|b| {
                if v == 8 {
                    f64::from_le_bytes(b.try_into().unwrap())
                } else {
                    f32::from_le_bytes(b.try_into().unwrap()) as f64
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if r.pos != buf.len() {
        return Err(PartitionError::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let check = CsrMatrix::try_from_parts(k, n_cols, row_ptr, col_idx, values)
        .map_err(|e| PartitionError::Malformed(e.to_string()))?;
    Ok(RobwSegment {
        seg_index,
        start_row,
        end_row,
        n_cols,
        byte_size: calc_mem(k as u64, nnz as u64, sizes),
        row_ptr: check.row_ptr().to_vec(),
        col_idx: check.col_idx().to_vec(),
        values: check.values().to_vec(),
    })
}
