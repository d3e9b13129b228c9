//! `cferr`: counterfactual error-rate audits and simulation sweeps.
//!
//! Exit codes: 0 on success, 1 on data, I/O, or estimation failures, 2 on
//! configuration errors.

mod audit;
mod config;
mod manifest;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use cferr_core::borrowing::BorrowMetric;
use clap::Parser;

use config::{Mode, Overrides};

/// A failure classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 1,
        }
    }
}

macro_rules! data_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.into())
            }
        }
    )*};
}

data_failure!(
    anyhow::Error,
    std::io::Error,
    serde_json::Error,
    csv::Error,
    cferr_core::Error,
    cferr_core::DataError,
    cferr_core::ModelError,
    cferr_core::PipelineError,
    cferr_core::InferenceError,
    cferr_core::SimulationError
);

#[derive(Debug, Parser)]
#[command(
    name = "cferr",
    version,
    about = "Counterfactual error-rate audits for binary risk predictors"
)]
struct Cli {
    /// Run configuration (JSON), or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Worker threads; all cores when omitted. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    borrow_metric: Option<BorrowMetric>,
    /// Bootstrap replicates; enables the bootstrap in audit mode.
    #[arg(long)]
    bootstrap_b: Option<usize>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha_grid_step: Option<f64>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let overrides = Overrides {
        mode: cli.mode,
        seed: cli.seed,
        out: cli.out,
        borrow_metric: cli.borrow_metric,
        bootstrap_b: cli.bootstrap_b,
        alpha_grid_step: cli.alpha_grid_step,
    };
    let resolved = config::resolve(config::load(&cli.config)?, &overrides)?;
    std::fs::create_dir_all(&resolved.out)
        .map_err(|e| Failure::Data(anyhow::anyhow!("cannot create {}: {e}", resolved.out.display())))?;
    match resolved.mode {
        Mode::Audit => audit::run(&resolved),
        Mode::Simulate => simulate::run(&resolved),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(msg) => eprintln!("cferr: configuration error: {msg}"),
                Failure::Data(e) => eprintln!("cferr: error: {e:#}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
