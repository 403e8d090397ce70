//! `partmc`: run partitioned MCMC pipelines, the benchmark grid, and
//! diagnostics on stored runs.
//!
//! Exit codes: 0 on success (including degraded runs), 1 when the pipeline
//! fails, 2 for usage and input errors.

mod bench;
mod diagnose;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Pipeline(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Pipeline(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl From<partmc::Error> for Failure {
    fn from(e: partmc::Error) -> Self {
        use partmc::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::UnknownTarget(_)
            | E::Schema(_)
            | E::Json(_)
            | E::DimensionMismatch { .. }
            | E::Io(_) => Failure::Usage(e.to_string()),
            other => Failure::Pipeline(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "partmc", version, about = "Parallel MCMC by space partitioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline and write samples, manifest and tree.
    Run(run::RunArgs),
    /// Run the benchmark grid and write one summary row per run.
    Benchmark(bench::BenchArgs),
    /// Recompute diagnostics from stored run artifacts.
    Diagnose(diagnose::DiagnoseArgs),
}

pub fn read_text(path: &PathBuf, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::cmd_run(args),
        Command::Benchmark(args) => bench::cmd_benchmark(args),
        Command::Diagnose(args) => diagnose::cmd_diagnose(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
