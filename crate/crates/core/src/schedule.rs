//! Three-phase scheduling of `C = A * B` over the tiered simulator.
//!
//! [`run_aires`] loads `B` straight to the device while `A` goes to the host,
//! splits `A` into row-aligned segments on the host, then streams the
//! segments through the device. Output rows are appended to one growing
//! device buffer sized exactly by the symbolic pass, and drained to the host
//! early whenever the next piece would not fit. When even a single row's
//! output cannot fit next to the current segment, the rest of that segment
//! is re-split into smaller pieces.
//!
//! [`run_maxmemory`] is the baseline: half the device for `B`, half for raw
//! byte windows of `A`. Every window that ends inside a row ships the
//! partial row back to the host, where it is merged into the next window and
//! re-sent.

use crate::io::checksum;
use crate::memory::{block_budget, calc_mem, estimate_b_memory, estimate_output_memory, MatrixStats, MemoryError};
use crate::partition::{maxmemory_partition, merge_partial, robw_partition, Fragment, PartitionError};
use crate::sim::{
    Channel, Event, IoLedger, Phase, SimConfig, SimError, TierKind, TieredSystem, TransferSpec,
};
use crate::sparse::{CscMatrix, CsrMatrix};
use crate::spgemm::{numeric, symbolic, CsrRows, KernelConfig, SpgemmError, SymbolicPlan};
use rayon::prelude::*;
use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    Aires,
    MaxMemory,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Aires, Strategy::MaxMemory];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Aires => "aires",
            Strategy::MaxMemory => "maxmemory",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aires" => Ok(Strategy::Aires),
            "maxmemory" => Ok(Strategy::MaxMemory),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("insufficient device memory: need {required} bytes, have {available}")]
    InsufficientDeviceMemory { required: u64, available: u64 },

    #[error("row {row} needs {bytes} bytes, more than the {budget}-byte segment budget")]
    RowTooLarge { row: usize, bytes: u64, budget: u64 },

    #[error(transparent)]
    Spgemm(#[from] SpgemmError),

    #[error("simulator: {0}")]
    Sim(#[from] SimError),

    #[error("partition: {0}")]
    Partition(PartitionError),
}

impl ScheduleError {
    /// True for errors that mean "does not fit in this budget".
    pub fn is_oom(&self) -> bool {
        matches!(
            self,
            ScheduleError::InsufficientDeviceMemory { .. }
                | ScheduleError::RowTooLarge { .. }
                | ScheduleError::Sim(SimError::CapacityExceeded { .. })
        )
    }
}

impl From<MemoryError> for ScheduleError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::InsufficientDeviceMemory { required, available } => {
                ScheduleError::InsufficientDeviceMemory { required, available }
            }
            other => ScheduleError::Partition(PartitionError::Malformed(other.to_string())),
        }
    }
}

impl From<PartitionError> for ScheduleError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::RowTooLarge { row, bytes, budget } => ScheduleError::RowTooLarge { row, bytes, budget },
            other => ScheduleError::Partition(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub kernel: KernelConfig,
}

impl RunConfig {
    pub fn with_device(&self, device_bytes: u64) -> Self {
        Self {
            sim: self.sim.with_device(device_bytes),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub strategy: Strategy,
    pub budget_bytes: u64,
    pub phase_seconds: [f64; 3],
    pub ledger: IoLedger,
    pub checksum: u64,
    /// Device loads of `A` pieces.
    pub segments: usize,
    /// Multiply-accumulates of the numeric pass.
    pub flops: u64,
    /// Simulated seconds spent returning, merging and re-sending fragments.
    pub merge_seconds: f64,
    /// Estimated output bytes used by the feasibility gate.
    pub c_estimate: u64,
    /// Device bytes of `B`.
    pub b_bytes: u64,
}

impl RunReport {
    pub fn total_seconds(&self) -> f64 {
        self.phase_seconds.iter().sum()
    }

    pub fn phase(&self, p: Phase) -> f64 {
        self.phase_seconds[p as usize]
    }

    /// Fraction of the total simulated time spent on merging.
    pub fn merge_share(&self) -> f64 {
        let total = self.total_seconds();
        if total > 0.0 {
            self.merge_seconds / total
        } else {
            0.0
        }
    }

    pub fn checksum_hex(&self) -> String {
        format!("{:016x}", self.checksum)
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub c: CsrMatrix,
    pub report: RunReport,
    pub trace: Vec<Event>,
}

/// Sizes fixed before any transfer.
struct Gate {
    m_b: u64,
    m_c: u64,
    m_a: u64,
}

fn gate(a: &CsrMatrix, b: &CscMatrix, sim: &SimConfig) -> Result<Gate, ScheduleError> {
    if a.n_cols() != b.n_rows() {
        return Err(SpgemmError::DimensionMismatch {
            left_rows: a.n_rows(),
            left_cols: a.n_cols(),
            right_rows: b.n_rows(),
            right_cols: b.n_cols(),
        }
        .into());
    }
    let sizes = sim.sizes();
    let sa = MatrixStats::of_csr(a, sizes);
    let sb = MatrixStats::of_csc(b, sizes);
    let m_c = estimate_output_memory(&sa, &sb);
    let m_b = estimate_b_memory(&sb);
    let m_a = block_budget(&sim.budget, m_c, m_b)?.segment_total;
    Ok(Gate { m_b, m_c, m_a })
}

fn check_rows(a: &CsrMatrix, m_a: u64, sim: &SimConfig) -> Result<(), ScheduleError> {
    for r in 0..a.n_rows() {
        let bytes = calc_mem(1, a.row_nnz(r) as u64, sim.sizes());
        if bytes > m_a {
            return Err(ScheduleError::RowTooLarge { row: r, bytes, budget: m_a });
        }
    }
    Ok(())
}

const C_DEVICE: &str = "C";

/// Device-side state shared by both strategies: the growing output buffer
/// and the computed blocks.
struct Engine<'a> {
    sys: TieredSystem,
    b: &'a CscMatrix,
    kernel: KernelConfig,
    blocks: Vec<CsrMatrix>,
    drained: Vec<String>,
    flops: u64,
}

enum Emit {
    Done,
    /// Row `pos` (local) cannot get room for its output.
    Stalled(usize),
}

impl<'a> Engine<'a> {
    fn new(sim: SimConfig, b: &'a CscMatrix, kernel: KernelConfig) -> Result<Self, SimError> {
        Ok(Self {
            sys: TieredSystem::new(sim)?,
            b,
            kernel,
            blocks: Vec::new(),
            drained: Vec::new(),
            flops: 0,
        })
    }

    fn index_bytes(&self) -> u64 {
        self.sys.config().sizes().index_bytes()
    }

    fn c_resident(&self) -> bool {
        self.sys.resident(TierKind::Device, C_DEVICE).is_some()
    }

    /// Sends the device output buffer to the host. Returns false if there
    /// was nothing to send.
    fn drain(&mut self) -> Result<bool, SimError> {
        let Some(bytes) = self.sys.resident(TierKind::Device, C_DEVICE) else {
            return Ok(false);
        };
        let name = format!("C.part{}", self.drained.len());
        self.sys.transfer_as(Channel::DeviceToHost, C_DEVICE, &name, bytes)?;
        self.sys.free(TierKind::Device, C_DEVICE)?;
        self.drained.push(name);
        Ok(true)
    }

    /// Frees device room for `bytes`, draining output if needed.
    fn make_room(&mut self, bytes: u64) -> Result<bool, SimError> {
        if self.sys.free_bytes(TierKind::Device) < bytes {
            self.drain()?;
        }
        Ok(self.sys.free_bytes(TierKind::Device) >= bytes)
    }

    /// Computes the output of rows `from..` of `rows` into the device buffer,
    /// in the longest runs that fit.
    fn emit(&mut self, rows: CsrRows<'_>, plan: &SymbolicPlan, from: usize, operand: &str) -> Result<Emit, ScheduleError> {
        let i = self.index_bytes();
        let entry = self.sys.config().sizes().entry_bytes();
        let n = rows.n_rows();
        let mut pos = from;
        while pos < n {
            let free = self.sys.free_bytes(TierKind::Device);
            let base = if self.c_resident() { 0 } else { i };
            let mut end = pos;
            let mut need = base;
            while end < n {
                let next = need + i + plan.row_nnz[end] as u64 * entry;
                if next > free {
                    break;
                }
                need = next;
                end += 1;
            }
            if end == pos {
                if self.drain()? {
                    continue;
                }
                return Ok(Emit::Stalled(pos));
            }
            if self.c_resident() {
                self.sys.grow(TierKind::Device, C_DEVICE, need)?;
            } else {
                self.sys.alloc(TierKind::Device, C_DEVICE, need)?;
            }
            let flops = plan.flops_in(pos..end);
            self.sys.compute(&format!("numeric:{operand}"), flops, &[operand, "B", C_DEVICE])?;
            self.flops += flops;
            self.blocks.push(numeric(rows, self.b, plan, pos..end, &self.kernel)?);
            pos = end;
        }
        Ok(Emit::Done)
    }

    fn symbolic(&mut self, rows: CsrRows<'_>, operand: &str) -> Result<SymbolicPlan, ScheduleError> {
        let plan = symbolic(rows, self.b, &self.kernel)?;
        self.sys.compute(&format!("symbolic:{operand}"), plan.flops(), &[operand, "B"])?;
        Ok(plan)
    }

    /// Phase III: drain, assemble on the host, store.
    fn finish(&mut self, n_rows: usize) -> Result<CsrMatrix, ScheduleError> {
        self.sys.set_phase(Phase::III)?;
        self.drain()?;
        self.sys.free(TierKind::Device, "B")?;
        let c = CsrMatrix::vstack(self.b.n_cols(), &self.blocks).expect("blocks share the column count");
        debug_assert_eq!(c.n_rows(), n_rows);
        let sizes = self.sys.config().sizes();
        let c_bytes = c.byte_size(sizes);
        self.sys.host_compute("assemble C", c_bytes);
        self.sys.alloc(TierKind::Host, "C", c_bytes)?;
        for part in std::mem::take(&mut self.drained) {
            self.sys.free(TierKind::Host, &part)?;
        }
        self.sys.transfer(Channel::HostToStorage, "C", c_bytes)?;
        self.sys.free(TierKind::Host, "C")?;
        Ok(c)
    }

    fn report(&self, strategy: Strategy, c: &CsrMatrix, gate: &Gate, segments: usize, merge_seconds: f64) -> RunReport {
        RunReport {
            strategy,
            budget_bytes: self.sys.config().budget.device_total,
            phase_seconds: Phase::ALL.map(|p| self.sys.phase_seconds(p)),
            ledger: self.sys.ledger().clone(),
            checksum: checksum(c),
            segments,
            flops: self.flops,
            merge_seconds,
            c_estimate: gate.m_c,
            b_bytes: gate.m_b,
        }
    }
}

/// A run of rows of `A` staged on the host, waiting for the device.
struct Piece {
    host: String,
    device: String,
    rows: Range<usize>,
    bytes: u64,
}

/// Row-aligned three-phase schedule.
pub fn run_aires(a: &CsrMatrix, b: &CscMatrix, cfg: &RunConfig) -> Result<ScheduleOutcome, ScheduleError> {
    let sim = cfg.sim;
    let sizes = sim.sizes();
    let gate = gate(a, b, &sim)?;
    let segments = robw_partition(a, gate.m_a, sizes)?;
    let a_bytes = a.byte_size(sizes);

    let mut eng = Engine::new(sim, b, cfg.kernel)?;
    eng.sys.alloc(TierKind::Storage, "A", a_bytes)?;
    eng.sys.alloc(TierKind::Storage, "B", gate.m_b)?;

    // Phase I: B straight to the device while A lands on the host.
    eng.sys.transfer_concurrent(&[
        TransferSpec { channel: Channel::Gds, source: "B", destination: "B", bytes: gate.m_b },
        TransferSpec { channel: Channel::StorageToHost, source: "A", destination: "A", bytes: a_bytes },
    ])?;
    eng.sys.host_compute("partition A", a_bytes);
    let mut queue = VecDeque::with_capacity(segments.len());
    for seg in &segments {
        let name = format!("seg{}", seg.seg_index);
        eng.sys.alloc(TierKind::Host, &name, seg.byte_size)?;
        queue.push_back(Piece {
            host: name.clone(),
            device: name,
            rows: seg.start_row..seg.end_row,
            bytes: seg.byte_size,
        });
    }
    eng.sys.free(TierKind::Host, "A")?;

    // Phase II
    eng.sys.set_phase(Phase::II)?;
    let full = CsrRows::of(a);
    let mut loaded: Option<String> = None;
    let mut loads = 0usize;
    while let Some(piece) = queue.pop_front() {
        if let Some(prev) = loaded.take() {
            eng.sys.free(TierKind::Device, &prev)?;
        }
        if !eng.make_room(piece.bytes)? {
            return Err(ScheduleError::InsufficientDeviceMemory {
                required: gate.m_b + piece.bytes,
                available: sim.budget.device_total,
            });
        }
        eng.sys.transfer_as(Channel::HostToDevice, &piece.host, &piece.device, piece.bytes)?;
        loaded = Some(piece.device.clone());
        loads += 1;

        let rows = full.sub(piece.rows.clone());
        let plan = eng.symbolic(rows, &piece.device)?;
        let Emit::Stalled(pos) = eng.emit(rows, &plan, 0, &piece.device)? else {
            continue;
        };
        if piece.rows.len() == 1 {
            return Err(ScheduleError::InsufficientDeviceMemory {
                required: gate.m_b + piece.bytes + calc_mem(1, plan.row_nnz[0] as u64, sizes),
                available: sim.budget.device_total,
            });
        }
        // Not even one output row fits beside this piece: cut the remaining
        // rows finer and retry them first.
        let rest = piece.rows.start + pos..piece.rows.end;
        let widest = rest
            .clone()
            .map(|r| calc_mem(1, a.row_nnz(r) as u64, sizes))
            .max()
            .unwrap_or(0);
        let budget = (piece.bytes / 2).max(widest);
        let sub = a.slice_rows(rest.start, rest.end);
        eng.sys.host_compute(&format!("resplit {}", piece.host), sub.byte_size(sizes));
        let parts = robw_partition(&sub, budget, sizes)?;
        for (q, part) in parts.iter().enumerate().rev() {
            queue.push_front(Piece {
                host: piece.host.clone(),
                device: format!("{}.{q}", piece.device),
                rows: rest.start + part.start_row..rest.start + part.end_row,
                bytes: part.byte_size,
            });
        }
    }
    if let Some(prev) = loaded.take() {
        eng.sys.free(TierKind::Device, &prev)?;
    }
    for seg in &segments {
        eng.sys.free(TierKind::Host, &format!("seg{}", seg.seg_index))?;
    }

    let c = eng.finish(a.n_rows())?;
    let report = eng.report(Strategy::Aires, &c, &gate, loads, 0.0);
    Ok(ScheduleOutcome { c, report, trace: eng.sys.into_trace() })
}

/// Byte-window baseline with host-side fragment merging.
pub fn run_maxmemory(a: &CsrMatrix, b: &CscMatrix, cfg: &RunConfig) -> Result<ScheduleOutcome, ScheduleError> {
    let sim = cfg.sim;
    let sizes = sim.sizes();
    let device = sim.budget.device_total;
    let gate = gate(a, b, &sim)?;
    check_rows(a, gate.m_a, &sim)?;
    let half = device / 2;
    if gate.m_b > half {
        return Err(ScheduleError::InsufficientDeviceMemory { required: 2 * gate.m_b, available: device });
    }
    let windows = maxmemory_partition(a, half, sizes)?;
    let a_bytes = a.byte_size(sizes);

    let mut eng = Engine::new(sim, b, cfg.kernel)?;
    eng.sys.alloc(TierKind::Storage, "A", a_bytes)?;
    eng.sys.alloc(TierKind::Storage, "B", gate.m_b)?;

    // Phase I: both operands staged through the host.
    eng.sys.transfer(Channel::StorageToHost, "A", a_bytes)?;
    eng.sys.transfer(Channel::StorageToHost, "B", gate.m_b)?;
    eng.sys.host_compute("partition A", a_bytes);
    eng.sys.transfer(Channel::HostToDevice, "B", gate.m_b)?;
    eng.sys.free(TierKind::Host, "B")?;

    // Phase II
    eng.sys.set_phase(Phase::II)?;
    let full = CsrRows::of(a);
    let h2d = sim.channels.get(Channel::HostToDevice);
    let mut merge_seconds = 0.0;
    let mut pending: Option<(Fragment, String)> = None;
    for window in windows.iter().cloned() {
        let name = format!("raw{}", window.seg_index);
        let merged = match pending.take() {
            Some((frag, host_name)) => {
                merge_seconds += eng.sys.merge(&format!("merge {host_name}"), frag.len());
                // the fragment bytes travel to the device a second time
                merge_seconds += frag.len() as f64 / h2d.bandwidth;
                let m = merge_partial(&frag, window)?;
                eng.sys.alloc(TierKind::Host, &name, m.transfer_bytes(sizes))?;
                eng.sys.free(TierKind::Host, &host_name)?;
                m
            }
            None => {
                eng.sys.alloc(TierKind::Host, &name, window.transfer_bytes(sizes))?;
                window
            }
        };
        let bytes = merged.transfer_bytes(sizes);
        if !eng.make_room(bytes)? {
            return Err(ScheduleError::InsufficientDeviceMemory { required: gate.m_b + bytes, available: device });
        }
        eng.sys.transfer(Channel::HostToDevice, &name, bytes)?;
        eng.sys.free(TierKind::Host, &name)?;

        let rows = full.sub(merged.completed_rows.clone());
        let plan = eng.symbolic(rows, &name)?;
        if let Emit::Stalled(pos) = eng.emit(rows, &plan, 0, &name)? {
            return Err(ScheduleError::InsufficientDeviceMemory {
                required: gate.m_b + bytes + calc_mem(1, plan.row_nnz[pos] as u64, sizes),
                available: device,
            });
        }
        if let Some(frag) = merged.trailing_partial {
            let host_name = format!("frag{}", frag.source_seg);
            merge_seconds += eng.sys.transfer_as(Channel::DeviceToHost, &name, &host_name, frag.len())?;
            pending = Some((frag, host_name));
        }
        eng.sys.free(TierKind::Device, &name)?;
    }
    debug_assert!(pending.is_none());
    eng.sys.free(TierKind::Host, "A")?;

    let c = eng.finish(a.n_rows())?;
    let report = eng.report(Strategy::MaxMemory, &c, &gate, windows.len(), merge_seconds);
    Ok(ScheduleOutcome { c, report, trace: eng.sys.into_trace() })
}

pub fn run(strategy: Strategy, a: &CsrMatrix, b: &CscMatrix, cfg: &RunConfig) -> Result<ScheduleOutcome, ScheduleError> {
    match strategy {
        Strategy::Aires => run_aires(a, b, cfg),
        Strategy::MaxMemory => run_maxmemory(a, b, cfg),
    }
}

/// One cell of a strategy sweep. `report` is `None` when the run did not fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub budget_bytes: u64,
    pub report: Option<RunReport>,
}

impl ComparisonRow {
    pub fn oom(&self) -> bool {
        self.report.is_none()
    }
}

/// Runs every (budget, strategy) cell in parallel. Out-of-memory outcomes
/// become rows with no report; other errors abort the sweep.
pub fn compare_strategies(
    a: &CsrMatrix,
    b: &CscMatrix,
    budgets: &[u64],
    strategies: &[Strategy],
    cfg: &RunConfig,
) -> Result<Vec<ComparisonRow>, ScheduleError> {
    let cells: Vec<(u64, Strategy)> = budgets
        .iter()
        .flat_map(|&m| strategies.iter().map(move |&s| (m, s)))
        .collect();
    let mut rows = cells
        .into_par_iter()
        .map(|(budget_bytes, strategy)| match run(strategy, a, b, &cfg.with_device(budget_bytes)) {
            Ok(out) => Ok(ComparisonRow { strategy, budget_bytes, report: Some(out.report) }),
            Err(e) if e.is_oom() => Ok(ComparisonRow { strategy, budget_bytes, report: None }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|r| (r.budget_bytes, r.strategy));
    Ok(rows)
}

pub const COMPARISON_HEADER: [&str; 14] = [
    "strategy",
    "budget_bytes",
    "total_s",
    "phase1_s",
    "phase2_s",
    "phase3_s",
    "gds_bytes",
    "s2h_bytes",
    "h2d_bytes",
    "d2h_bytes",
    "merge_bytes",
    "segments",
    "oom",
    "c_checksum",
];

/// CSV fields of one row, in [`COMPARISON_HEADER`] order.
pub fn comparison_record(row: &ComparisonRow) -> Vec<String> {
    let mut rec = vec![row.strategy.name().to_owned(), row.budget_bytes.to_string()];
    match &row.report {
        Some(r) => {
            let l = &r.ledger;
            rec.extend([
                r.total_seconds().to_string(),
                r.phase(Phase::I).to_string(),
                r.phase(Phase::II).to_string(),
                r.phase(Phase::III).to_string(),
                l.channel(Channel::Gds).bytes.to_string(),
                l.channel(Channel::StorageToHost).bytes.to_string(),
                l.channel(Channel::HostToDevice).bytes.to_string(),
                l.channel(Channel::DeviceToHost).bytes.to_string(),
                l.merge_bytes.to_string(),
                r.segments.to_string(),
                "0".to_owned(),
                r.checksum_hex(),
            ]);
        }
        None => {
            rec.extend(std::iter::repeat_n(String::new(), 10));
            rec.extend(["1".to_owned(), String::new()]);
        }
    }
    rec
}

/// Writes sweep rows as CSV under [`COMPARISON_HEADER`].
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER)?;
    for row in rows {
        w.write_record(comparison_record(row))?;
    }
    w.flush()?;
    Ok(())
}
