//! Out-of-core sparse matrix multiplication for GCN-style workloads.
//!
//! The pieces, bottom up:
//!
//! - [`sparse`]: CSR / CSC / dense containers, plus [`mtx`] and [`io`] for
//!   getting matrices on and off disk.
//! - [`memory`]: analytic device-memory estimators and the exact segment
//!   byte cost.
//! - [`partition`]: row block-wise segmentation and the byte-granular
//!   MaxMemory baseline.
//! - [`spgemm`]: the two-pass block kernel and a dense oracle.
//! - [`sim`]: a deterministic device / host / storage simulator with a
//!   linear transfer cost model.
//! - [`schedule`]: three-phase scheduling over the simulator, the MaxMemory
//!   baseline schedule, and strategy sweeps.
//! - [`gcn`]: one GCN forward layer executed through the scheduler.
//! - [`config`] and [`synth`]: TOML experiment settings and seeded inputs.

pub mod config;
pub mod gcn;
pub mod io;
pub mod memory;
pub mod mtx;
pub mod partition;
pub mod schedule;
pub mod sim;
pub mod sparse;
pub mod spgemm;
pub mod synth;

pub use memory::{ElementSizes, MemoryBudget};
pub use partition::{RawSegment, RobwSegment};
pub use schedule::{RunConfig, RunReport, ScheduleOutcome, Strategy};
pub use sim::{IoLedger, SimConfig, TieredSystem};
pub use sparse::{CscMatrix, CsrMatrix, DenseMatrix};
