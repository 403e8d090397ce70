use std::fs::File;
use std::path::PathBuf;

use clap::Args;
use partmc::benchmark::{run_grid, write_grid_csv, BenchmarkGrid};
use partmc::executor::WorkerPool;
use partmc::pipeline::WORKERS_ENV;
use partmc::target::{TargetSource, MIX9D};

use crate::{read_text, Failure};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Grid configuration (JSON). Flags below override its fields.
    pub config: Option<PathBuf>,
    #[arg(long, default_value = MIX9D)]
    pub target: String,
    /// Summary table.
    #[arg(long, short, default_value = "benchmark.csv")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub subspaces: Option<Vec<usize>>,
    /// Wall-clock budgets in seconds.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Multiplies every budget.
    #[arg(long)]
    pub time_scale: Option<f64>,
    /// Fixed sample count per chain instead of wall-clock budgets.
    #[arg(long)]
    pub samples_per_chain: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

fn workers(flag: Option<usize>) -> Result<usize, Failure> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Failure::Usage(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        };
    }
    Ok(flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

pub fn cmd_benchmark(args: BenchArgs) -> Result<(), Failure> {
    let mut grid: BenchmarkGrid = match &args.config {
        Some(p) => serde_json::from_str(&read_text(p, "grid config")?)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => BenchmarkGrid::default(),
    };
    if let Some(v) = &args.subspaces {
        grid.subspace_counts = v.clone();
    }
    if let Some(v) = &args.budgets {
        grid.budgets = v.clone();
    }
    if let Some(v) = args.repetitions {
        grid.repetitions = v;
    }
    if let Some(v) = args.time_scale {
        grid.time_scale = v;
    }
    if let Some(v) = args.samples_per_chain {
        grid.samples_per_chain = Some(v);
    }
    if let Some(v) = args.seed {
        grid.seed = v;
    }
    grid.validate()?;
    let source = TargetSource::Named(args.target.clone());
    let target = source.resolve()?;
    let pool = WorkerPool::new(workers(args.workers)?);
    let total = grid.n_runs();
    let mut done = 0;
    let rows = run_grid(&grid, &source, &target, &pool, |row| {
        done += 1;
        let status = match &row.error {
            Some(e) => format!("failed: {e}"),
            None => format!("integral {:.4} ± {:.4}", row.integral, row.std_error),
        };
        eprintln!(
            "[{done}/{total}] S={} budget={} rep={} {status}",
            row.subspaces, row.budget, row.repetition
        );
    })?;
    let file =
        File::create(&args.out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    write_grid_csv(&rows, file)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}
