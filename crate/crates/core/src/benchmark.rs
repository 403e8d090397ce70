//! The benchmark grid: every combination of subspace count, sampling budget
//! and repetition, run on one target, one summary row per run.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{rate_report, RunTiming};
use crate::error::{Error, Result};
use crate::executor::Executor;
use crate::exploration::ExplorationConfig;
use crate::pipeline::{run_pipeline_on, RunPlan};
use crate::rng::derive_subspace_seed;
use crate::sampler::{SamplingMode, SubspaceRunConfig};
use crate::target::{Target, TargetSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkGrid {
    pub subspace_counts: Vec<usize>,
    /// Wall-clock sampling budgets per subspace, in seconds.
    pub budgets: Vec<f64>,
    pub repetitions: usize,
    /// Multiplies every budget; below 1 for quick runs of the same grid.
    pub time_scale: f64,
    /// Replace the wall-clock budget by a fixed number of samples per chain.
    /// The budget column is then only a label.
    pub samples_per_chain: Option<usize>,
    pub exploration: ExplorationConfig,
    pub sampling: SubspaceRunConfig,
    pub min_rel_gain: f64,
    pub seed: u64,
}

impl Default for BenchmarkGrid {
    fn default() -> Self {
        Self {
            subspace_counts: vec![1, 2, 4, 8, 16, 32],
            budgets: vec![3.0, 7.0, 11.0, 15.0],
            repetitions: 3,
            time_scale: 1.0,
            samples_per_chain: None,
            exploration: ExplorationConfig {
                n_chains: 50,
                samples_per_chain: 500,
                ..Default::default()
            },
            sampling: SubspaceRunConfig::default(),
            // the grid asks for an exact number of subspaces
            min_rel_gain: 0.0,
            seed: 0,
        }
    }
}

impl BenchmarkGrid {
    pub fn validate(&self) -> Result<()> {
        if self.subspace_counts.is_empty() || self.subspace_counts.contains(&0) {
            return Err(Error::invalid("subspace counts must be positive"));
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::invalid("budgets must be positive"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if !(self.time_scale > 0.0) {
            return Err(Error::invalid("time_scale must be positive"));
        }
        if self.samples_per_chain == Some(0) {
            return Err(Error::invalid("samples_per_chain must be at least 1"));
        }
        Ok(())
    }

    pub fn n_runs(&self) -> usize {
        self.subspace_counts.len() * self.budgets.len() * self.repetitions
    }

    /// Seed of repetition `rep`; shared by all cells of that repetition.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        derive_subspace_seed(self.seed ^ 0xbe9c_4a7d_0000_0000, rep)
    }

    /// Plan of one grid cell.
    pub fn plan(&self, target: TargetSource, subspaces: usize, budget: f64, rep: usize, workers: usize) -> RunPlan {
        let mut plan = RunPlan::new(target);
        plan.exploration = self.exploration.clone();
        plan.partition.max_subspaces = subspaces;
        plan.partition.min_rel_gain = self.min_rel_gain;
        plan.sampling = self.sampling.clone();
        plan.sampling.mode = match self.samples_per_chain {
            Some(n) => SamplingMode::FixedCount { samples_per_chain: n },
            None => SamplingMode::WallClock {
                seconds: budget * self.time_scale,
            },
        };
        plan.workers = workers;
        plan.seed = self.repetition_seed(rep);
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub subspaces: usize,
    pub budget: f64,
    pub repetition: usize,
    pub seed: u64,
    pub n_leaves: usize,
    pub n_samples: usize,
    pub max_wall_seconds: f64,
    pub total_cpu_seconds: f64,
    pub integral: f64,
    pub std_error: f64,
    pub integral_ratio: Option<f64>,
    pub mean_neff_fraction: Option<f64>,
    pub std_neff_fraction: Option<f64>,
    pub sampling_rate: Option<f64>,
    pub per_chain_rate: Option<f64>,
    pub degraded: bool,
    pub error: Option<String>,
}

impl BenchmarkRow {
    fn timing(&self) -> RunTiming {
        RunTiming {
            n_subspaces: self.n_leaves,
            n_samples: self.n_samples,
            max_wall_seconds: self.max_wall_seconds,
            total_cpu_seconds: self.total_cpu_seconds,
        }
    }
}

/// Runs every cell of the grid in order (subspace count, then budget, then
/// repetition). Failures are recorded in the row and do not stop the grid.
/// Rates are filled in against the single-subspace row of the same budget
/// and repetition when the grid has one.
pub fn run_grid(
    grid: &BenchmarkGrid,
    source: &TargetSource,
    target: &Target,
    exec: &dyn Executor,
    mut progress: impl FnMut(&BenchmarkRow),
) -> Result<Vec<BenchmarkRow>> {
    grid.validate()?;
    let mut rows = Vec::with_capacity(grid.n_runs());
    for &s in &grid.subspace_counts {
        for &budget in &grid.budgets {
            for rep in 0..grid.repetitions {
                let plan = grid.plan(source.clone(), s, budget, rep, exec.workers());
                let row = match run_pipeline_on(&plan, target, exec) {
                    Ok(res) => {
                        let t = res.manifest.timing.expect("pipeline records timing");
                        let total = res.total();
                        BenchmarkRow {
                            subspaces: s,
                            budget,
                            repetition: rep,
                            seed: plan.seed,
                            n_leaves: res.tree.n_leaves(),
                            n_samples: t.n_samples,
                            max_wall_seconds: t.max_wall_seconds,
                            total_cpu_seconds: t.total_cpu_seconds,
                            integral: total.value,
                            std_error: total.std_error,
                            integral_ratio: target.known_integral.map(|k| total.value / k),
                            mean_neff_fraction: res.manifest.ess.as_ref().map(|e| e.mean_fraction()),
                            std_neff_fraction: res.manifest.ess.as_ref().map(|e| e.std_fraction()),
                            sampling_rate: None,
                            per_chain_rate: None,
                            degraded: total.degraded,
                            error: None,
                        }
                    }
                    Err(e) => BenchmarkRow {
                        subspaces: s,
                        budget,
                        repetition: rep,
                        seed: plan.seed,
                        n_leaves: 0,
                        n_samples: 0,
                        max_wall_seconds: 0.0,
                        total_cpu_seconds: 0.0,
                        integral: f64::NAN,
                        std_error: f64::NAN,
                        integral_ratio: None,
                        mean_neff_fraction: None,
                        std_neff_fraction: None,
                        sampling_rate: None,
                        per_chain_rate: None,
                        degraded: true,
                        error: Some(e.to_string()),
                    },
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    fill_rates(&mut rows);
    Ok(rows)
}

fn fill_rates(rows: &mut [BenchmarkRow]) {
    let baselines: Vec<(f64, usize, RunTiming)> = rows
        .iter()
        .filter(|r| r.subspaces == 1 && r.n_leaves == 1 && r.error.is_none())
        .map(|r| (r.budget, r.repetition, r.timing()))
        .collect();
    for row in rows.iter_mut().filter(|r| r.error.is_none()) {
        let base = baselines
            .iter()
            .find(|(b, rep, _)| *b == row.budget && *rep == row.repetition);
        if let Some((_, _, base)) = base {
            if let Ok(rate) = rate_report(base, &row.timing()) {
                row.sampling_rate = Some(rate.sampling_rate);
                row.per_chain_rate = Some(rate.per_chain_rate);
            }
        }
    }
}

pub const GRID_COLUMNS: [&str; 17] = [
    "subspaces",
    "budget_seconds",
    "repetition",
    "seed",
    "n_leaves",
    "n_samples",
    "max_wall_seconds",
    "total_cpu_seconds",
    "integral",
    "std_error",
    "integral_ratio",
    "mean_neff_fraction",
    "std_neff_fraction",
    "sampling_rate",
    "per_chain_rate",
    "degraded",
    "error",
];

pub fn write_grid_csv<W: Write>(rows: &[BenchmarkRow], mut out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
    writeln!(out, "# schema=1")?;
    writeln!(out, "{}", GRID_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{},{},{},{}",
            r.subspaces,
            r.budget,
            r.repetition,
            r.seed,
            r.n_leaves,
            r.n_samples,
            r.max_wall_seconds,
            r.total_cpu_seconds,
            r.integral,
            r.std_error,
            opt(r.integral_ratio),
            opt(r.mean_neff_fraction),
            opt(r.std_neff_fraction),
            opt(r.sampling_rate),
            opt(r.per_chain_rate),
            r.degraded,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )?;
    }
    Ok(())
}
