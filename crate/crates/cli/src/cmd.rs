//! Subcommand bodies. Each returns `Err` with the exit code it should map to.

use rayon::prelude::*;
use robw_core::config::{ConfigError, ExperimentConfig};
use robw_core::gcn::{layer_forward, Engine, GcnError, GcnLayerSpec};
use robw_core::io::{checksum_hex, read_csr, read_dense, write_csr, FormatError};
use robw_core::mtx::{load_matrix_market, write_matrix_market, MtxError};
use robw_core::schedule::{
    comparison_record, compare_strategies, run, write_comparison_csv, ComparisonRow, ScheduleError,
    COMPARISON_HEADER,
};
use robw_core::sim::write_trace_csv;
use robw_core::synth::{random_dense, random_features, symmetric_adjacency};
use robw_core::{CscMatrix, CsrMatrix, DenseMatrix, RunConfig, Strategy};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Parse(String),

    #[error("{failed} of {total} cells ran out of device memory")]
    OutOfMemory { failed: usize, total: usize },

    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) => 2,
            CliError::OutOfMemory { .. } => 3,
            CliError::Failed(_) | CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<MtxError> for CliError {
    fn from(e: MtxError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::Spgemm(s) => CliError::Usage(s.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<GcnError> for CliError {
    fn from(e: GcnError) -> Self {
        match e {
            GcnError::Schedule(s) => s.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn is_mtx(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
}

/// Matrix Market by extension, otherwise a binary container.
fn load_sparse(path: &Path) -> Result<CsrMatrix, CliError> {
    if is_mtx(path) {
        Ok(load_matrix_market(path)?)
    } else {
        Ok(read_csr(path)?)
    }
}

fn load_dense(path: &Path, cap: usize) -> Result<DenseMatrix, CliError> {
    if is_mtx(path) {
        load_sparse(path)?
            .to_dense_capped(cap)
            .map_err(|e| CliError::Usage(e.to_string()))
    } else {
        Ok(read_dense(path)?)
    }
}

fn run_config(cfg: &ExperimentConfig) -> RunConfig {
    RunConfig {
        sim: cfg.sim,
        kernel: cfg.kernel,
    }
}

fn out_file(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.io.out_dir)?;
    Ok(cfg.io.out_dir.join(name))
}

fn oom_check(failed: usize, total: usize) -> Result<(), CliError> {
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::OutOfMemory { failed, total })
    }
}

pub fn convert(cfg: &ExperimentConfig, input: &Path, output: &Path) -> Result<(), CliError> {
    let a = load_matrix_market(input)?;
    write_csr(output, &a)?;
    println!(
        "rows={} cols={} nnz={} bytes={}",
        a.n_rows(),
        a.n_cols(),
        a.nnz(),
        a.byte_size(cfg.sim.sizes())
    );
    Ok(())
}

pub fn gen(nodes: usize, density: f64, seed: u64, output: &Path) -> Result<(), CliError> {
    let a = symmetric_adjacency(nodes, density, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    if is_mtx(output) {
        let mut w = BufWriter::new(File::create(output)?);
        write_matrix_market(&a, &mut w)?;
        w.flush()?;
    } else {
        write_csr(output, &a)?;
    }
    println!("rows={} cols={} nnz={}", a.n_rows(), a.n_cols(), a.nnz());
    Ok(())
}

fn load_pair(a: &Path, b: Option<&Path>) -> Result<(CsrMatrix, CscMatrix), CliError> {
    let a_mat = load_sparse(a)?;
    let b_mat = match b {
        Some(p) => load_sparse(p)?.to_csc(),
        None => a_mat.to_csc(),
    };
    Ok((a_mat, b_mat))
}

fn print_row(row: &ComparisonRow) {
    match &row.report {
        Some(r) => println!(
            "{} budget={} total_s={} merge_bytes={} checksum={}",
            row.strategy,
            row.budget_bytes,
            r.total_seconds(),
            r.ledger.merge_bytes,
            r.checksum_hex()
        ),
        None => println!("{} budget={} oom", row.strategy, row.budget_bytes),
    }
}

/// Writes `multiply.csv`, `c.csr` from the first completed cell, and one
/// trace per completed cell when `io.write_trace` is set.
pub fn multiply(
    cfg: &ExperimentConfig,
    a: &Path,
    b: Option<&Path>,
    budgets: &[u64],
    strategies: &[Strategy],
) -> Result<(), CliError> {
    let (a, b) = load_pair(a, b)?;
    let rc = run_config(cfg);
    let rows = compare_strategies(&a, &b, budgets, strategies, &rc)?;
    write_comparison_csv(&rows, File::create(out_file(cfg, "multiply.csv")?)?)?;
    let mut wrote_c = false;
    for row in rows.iter().filter(|r| !r.oom()) {
        if wrote_c && !cfg.io.write_trace {
            break;
        }
        let out = run(row.strategy, &a, &b, &rc.with_device(row.budget_bytes))?;
        if !wrote_c {
            write_csr(out_file(cfg, "c.csr")?, &out.c)?;
            wrote_c = true;
        }
        if cfg.io.write_trace {
            let name = format!("trace_{}_{}.csv", row.strategy, row.budget_bytes);
            write_trace_csv(&out.trace, File::create(out_file(cfg, &name)?)?)?;
        }
    }
    rows.iter().for_each(print_row);
    oom_check(rows.iter().filter(|r| r.oom()).count(), rows.len())
}

pub struct GcnInputs {
    pub a: PathBuf,
    pub h: Option<PathBuf>,
    pub w: Option<PathBuf>,
    pub feature_dims: Vec<usize>,
    pub feature_sparsity: f64,
    pub weight_out_dim: Option<usize>,
    pub seed: u64,
}

/// Generated features use seed `seed + dim`, generated weights `seed + dim + 2^32`.
fn gcn_operands(inputs: &GcnInputs, n: usize, dense_cap: usize) -> Result<Vec<(CscMatrix, DenseMatrix)>, CliError> {
    let features: Vec<CsrMatrix> = match &inputs.h {
        Some(path) => {
            let h = load_sparse(path)?;
            if !inputs.feature_dims.is_empty() && inputs.feature_dims != [h.n_cols()] {
                return Err(CliError::Usage(format!(
                    "--feature-dim {:?} disagrees with H width {}",
                    inputs.feature_dims,
                    h.n_cols()
                )));
            }
            vec![h]
        }
        None if inputs.feature_dims.is_empty() => {
            return Err(CliError::Usage("pass --h or --feature-dim".into()));
        }
        None => inputs
            .feature_dims
            .iter()
            .map(|&d| {
                random_features(n, d, inputs.feature_sparsity, inputs.seed.wrapping_add(d as u64))
                    .map_err(|e| CliError::Usage(e.to_string()))
            })
            .collect::<Result<_, _>>()?,
    };
    let loaded_w = inputs.w.as_deref().map(|p| load_dense(p, dense_cap)).transpose()?;
    features
        .into_iter()
        .map(|h| {
            if h.n_rows() != n {
                return Err(CliError::Usage(format!("H has {} rows, graph has {n} nodes", h.n_rows())));
            }
            let d = h.n_cols();
            let w = match (&loaded_w, inputs.weight_out_dim) {
                (Some(w), _) if w.n_rows() != d => {
                    return Err(CliError::Usage(format!("W has {} rows, features have {d} columns", w.n_rows())));
                }
                (Some(w), _) => w.clone(),
                (None, Some(k)) => random_dense(d, k, inputs.seed.wrapping_add(d as u64).wrapping_add(1 << 32)),
                (None, None) => {
                    return Err(CliError::Usage("missing weight matrix: pass --w or --weight-out-dim".into()));
                }
            };
            Ok((h.to_csc(), w))
        })
        .collect()
}

/// Writes `gcn.csv` (one row per feature dim, budget and strategy) and
/// `h_next_d{dim}.csr` from the first completed cell of each dim.
pub fn gcn(cfg: &ExperimentConfig, inputs: &GcnInputs, budgets: &[u64], strategies: &[Strategy]) -> Result<(), CliError> {
    let a = load_sparse(&inputs.a)?;
    let operands = gcn_operands(inputs, a.n_rows(), cfg.io.dense_cap)?;
    let rc = run_config(cfg);
    let cells: Vec<(usize, u64, Strategy)> = (0..operands.len())
        .flat_map(|i| budgets.iter().flat_map(move |&m| strategies.iter().map(move |&s| (i, m, s))))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(i, budget, strategy)| {
            let (h, w) = &operands[i];
            let spec = GcnLayerSpec::new(w.clone(), 0.0);
            match layer_forward(&a, h, &spec, Engine::Scheduled(strategy), &rc.with_device(budget)) {
                Ok(out) => Ok(Some(out)),
                Err(GcnError::Schedule(e)) if e.is_oom() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut header = vec!["feature_dim"];
    header.extend(COMPARISON_HEADER);
    header.extend(["h_next_nnz", "h_next_checksum"]);
    let mut csv = csv::Writer::from_path(out_file(cfg, "gcn.csv")?)?;
    csv.write_record(&header)?;
    let mut written = vec![false; operands.len()];
    let mut failed = 0;
    for (&(i, budget_bytes, strategy), out) in cells.iter().zip(&results) {
        let dim = operands[i].0.n_cols();
        let row = ComparisonRow {
            strategy,
            budget_bytes,
            report: out.as_ref().and_then(|o| o.report.clone()),
        };
        let mut rec = vec![dim.to_string()];
        rec.extend(comparison_record(&row));
        match out {
            Some(o) => {
                rec.extend([o.h_next.nnz().to_string(), checksum_hex(&o.h_next)]);
                if !written[i] {
                    write_csr(out_file(cfg, &format!("h_next_d{dim}.csr"))?, &o.h_next)?;
                    written[i] = true;
                }
            }
            None => {
                rec.extend([String::new(), String::new()]);
                failed += 1;
            }
        }
        csv.write_record(&rec)?;
        print!("d={dim} ");
        print_row(&row);
    }
    csv.flush()?;
    oom_check(failed, cells.len())
}

pub const BENCH_MERGE_HEADER: [&str; 7] = [
    "budget_bytes",
    "maxmemory_merge_bytes",
    "maxmemory_merge_share",
    "maxmemory_total_s",
    "aires_merge_bytes",
    "aires_total_s",
    "oom",
];

/// Writes `bench_merge.csv`, one row per budget in ascending order.
pub fn bench_merge(cfg: &ExperimentConfig, a: &Path, b: Option<&Path>, budgets: &[u64]) -> Result<(), CliError> {
    let (a, b) = load_pair(a, b)?;
    let rows = compare_strategies(&a, &b, budgets, &Strategy::ALL, &run_config(cfg))?;
    let mut csv = csv::Writer::from_path(out_file(cfg, "bench_merge.csv")?)?;
    csv.write_record(BENCH_MERGE_HEADER)?;
    let mut budgets: Vec<u64> = budgets.to_vec();
    budgets.sort_unstable();
    budgets.dedup();
    let mut failed = 0;
    for m in budgets {
        let report = |s: Strategy| {
            rows.iter()
                .find(|r| r.budget_bytes == m && r.strategy == s)
                .and_then(|r| r.report.as_ref())
        };
        let mut rec = vec![m.to_string()];
        match report(Strategy::MaxMemory) {
            Some(r) => rec.extend([
                r.ledger.merge_bytes.to_string(),
                r.merge_share().to_string(),
                r.total_seconds().to_string(),
            ]),
            None => rec.extend(["", "", ""].map(String::from)),
        }
        match report(Strategy::Aires) {
            Some(r) => rec.extend([r.ledger.merge_bytes.to_string(), r.total_seconds().to_string()]),
            None => rec.extend(["", ""].map(String::from)),
        }
        let oom = report(Strategy::MaxMemory).is_none() || report(Strategy::Aires).is_none();
        failed += usize::from(oom);
        rec.push(u8::from(oom).to_string());
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    rows.iter().for_each(print_row);
    oom_check(failed, rows.len() / Strategy::ALL.len())
}
