//! `robw`: ingestion, synthetic inputs, scheduled SpGEMM sweeps, GCN layers
//! and merge-overhead reports from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 parse, 3 out of memory.

mod cmd;

use clap::{Args, Parser, Subcommand};
use cmd::CliError;
use robw_core::config::ExperimentConfig;
use robw_core::Strategy;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "robw", version, about = "Out-of-core SpGEMM experiments on a simulated tiered memory system")]
struct Cli {
    /// TOML experiment config (`memory.*`, `channels.*`, `cost.*`, `io.*`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `io.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for every generated input.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Matrix Market to binary CSR container.
    Convert {
        input: PathBuf,
        output: PathBuf,
    },
    /// Random symmetric adjacency matrix.
    Gen {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        density: f64,
        /// Written as Matrix Market when the name ends in `.mtx`, else as a container.
        output: PathBuf,
    },
    /// `C = A B` under every requested strategy and device budget.
    Multiply {
        #[arg(long)]
        a: PathBuf,
        /// Defaults to A.
        #[arg(long)]
        b: Option<PathBuf>,
        #[command(flatten)]
        sweep: Sweep,
    },
    /// One GCN forward layer `ReLU(Ã H W)`.
    Gcn {
        #[arg(long)]
        a: PathBuf,
        /// Feature matrix; generated from `--feature-dim` when absent.
        #[arg(long)]
        h: Option<PathBuf>,
        /// Weight matrix; generated from `--weight-out-dim` when absent.
        #[arg(long)]
        w: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        feature_dim: Vec<usize>,
        #[arg(long, default_value_t = 0.0)]
        feature_sparsity: f64,
        #[arg(long)]
        weight_out_dim: Option<usize>,
        #[command(flatten)]
        sweep: Sweep,
    },
    /// MaxMemory merge bytes and time share against AIRES over a budget sweep.
    BenchMerge {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        budget: Vec<u64>,
    },
}

#[derive(Args, Debug)]
struct Sweep {
    /// Device budgets in bytes; defaults to `memory.device_bytes`.
    #[arg(long, value_delimiter = ',')]
    budget: Vec<u64>,
    /// `aires`, `maxmemory` or `all`.
    #[arg(long, default_value = "all", value_parser = parse_strategies)]
    strategy: StrategySet,
}

#[derive(Debug, Clone)]
struct StrategySet(Vec<Strategy>);

fn parse_strategies(s: &str) -> Result<StrategySet, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(StrategySet(Strategy::ALL.to_vec()));
    }
    s.parse::<Strategy>().map(|st| StrategySet(vec![st])).map_err(|e| e.to_string())
}

impl Sweep {
    fn budgets(&self, cfg: &ExperimentConfig) -> Vec<u64> {
        if self.budget.is_empty() {
            vec![cfg.sim.budget.device_total]
        } else {
            self.budget.clone()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.io.out_dir = out;
    }
    match cli.command {
        Command::Convert { input, output } => cmd::convert(&cfg, &input, &output),
        Command::Gen { nodes, density, output } => cmd::gen(nodes, density, cli.seed, &output),
        Command::Multiply { a, b, sweep } => {
            let budgets = sweep.budgets(&cfg);
            cmd::multiply(&cfg, &a, b.as_deref(), &budgets, &sweep.strategy.0)
        }
        Command::Gcn {
            a,
            h,
            w,
            feature_dim,
            feature_sparsity,
            weight_out_dim,
            sweep,
        } => {
            let budgets = sweep.budgets(&cfg);
            let inputs = cmd::GcnInputs {
                a,
                h,
                w,
                feature_dims: feature_dim,
                feature_sparsity,
                weight_out_dim,
                seed: cli.seed,
            };
            cmd::gcn(&cfg, &inputs, &budgets, &sweep.strategy.0)
        }
        Command::BenchMerge { a, b, budget } => cmd::bench_merge(&cfg, &a, b.as_deref(), &budget),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("robw: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
