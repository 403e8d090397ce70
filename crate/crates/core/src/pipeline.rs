//! The full run: explore, partition, sample and integrate every subspace on a
//! bounded worker pool, then stitch.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{group_ess, stitched_n_eff, EssReport, RunTiming};
use crate::error::{Error, Result};
use crate::executor::{map_indexed, Executor, WorkerPool};
use crate::exploration::{explore_on, ExplorationConfig, ExplorationSampleSet};
use crate::integration::{HarmonicRegion, IntegralEstimate, Integrator, TotalIntegral, HARMONIC_REGION};
use crate::matrix::SampleMatrix;
use crate::partition::{build_tree, PartitionConfig, PartitionTree, TreeJson};
use crate::rng::derive_subspace_seed;
use crate::sampler::{sample_subspace, SubspaceRunConfig, SubspaceSamples, TaskTiming, TuningReport};
use crate::stitch::{stitch, WeightedSampleSet};
use crate::target::{ParameterBox, Target, TargetSource};
use crate::timing::with_cpu_time;

/// Environment variable overriding [`RunPlan::workers`].
pub const WORKERS_ENV: &str = "PARTITION_MCMC_WORKERS";

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn default_integrator() -> String {
    HARMONIC_REGION.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    pub target: TargetSource,
    #[serde(default)]
    pub exploration: ExplorationConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub sampling: SubspaceRunConfig,
    #[serde(default = "default_integrator")]
    pub integrator: String,
    #[serde(default)]
    pub harmonic_region: HarmonicRegion,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
}

impl RunPlan {
    pub fn new(target: TargetSource) -> Self {
        Self {
            target,
            exploration: ExplorationConfig::default(),
            partition: PartitionConfig::default(),
            sampling: SubspaceRunConfig::default(),
            integrator: default_integrator(),
            harmonic_region: HarmonicRegion::default(),
            workers: default_workers(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.partition.max_subspaces == 0 {
            return Err(Error::invalid("max_subspaces must be at least 1"));
        }
        self.exploration.validate()?;
        self.sampling.validate()?;
        self.integrator_impl().map(|_| ())
    }

    fn integrator_impl(&self) -> Result<Box<dyn Integrator>> {
        match self.integrator.as_str() {
            HARMONIC_REGION => Ok(Box::new(self.harmonic_region.clone())),
            other => Err(Error::invalid(format!("unknown integrator `{other}`"))),
        }
    }

    /// Worker count after applying the environment override.
    pub fn effective_workers(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(Error::invalid(format!(
                    "{WORKERS_ENV} must be a positive integer, got `{v}`"
                ))),
            },
            Err(_) => Ok(self.workers),
        }
    }
}

/// Outcome of one subspace task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceReport {
    pub index: usize,
    #[serde(rename = "box")]
    pub bx: ParameterBox,
    pub exploration_count: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub n_chains: usize,
    pub estimate: Option<IntegralEstimate>,
    /// Per-sample weight `I_k / N_k`.
    pub weight: Option<f64>,
    /// Whole task: tuning, sampling and integration.
    pub timing: TaskTiming,
    pub tuning: Option<TuningReport>,
    pub acceptance: Option<f64>,
    /// Multi-chain effective sample size per dimension.
    pub ess: Option<Vec<Option<f64>>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub exploration_seconds: f64,
    pub partition_seconds: f64,
    /// Wall-clock time of the parallel subspace phase.
    pub subspace_phase_seconds: f64,
    pub stitch_seconds: f64,
    pub total_seconds: f64,
}

/// Everything about a run except the samples themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub plan: RunPlan,
    pub workers: usize,
    pub target_name: String,
    pub support: ParameterBox,
    pub known_integral: Option<f64>,
    pub reproducible: bool,
    pub n_exploration: usize,
    pub tree: TreeJson,
    pub subspaces: Vec<SubspaceReport>,
    pub total: Option<TotalIntegral>,
    pub n_samples: usize,
    pub ess: Option<EssReport>,
    pub timing: Option<RunTiming>,
    pub phases: PhaseTimes,
    pub warnings: Vec<String>,
}

pub const MANIFEST_SCHEMA: u32 = 1;

impl Manifest {
    /// Effective size of the stitched sample per dimension, combining each
    /// subspace's multi-chain ESS with its integral as weight. Used for
    /// two-sample tests on the weighted marginals.
    pub fn stitched_n_eff(&self) -> Vec<f64> {
        let dim = self.support.dim();
        (0..dim)
            .map(|j| {
                let parts: Vec<(f64, Option<f64>)> = self
                    .subspaces
                    .iter()
                    .filter(|s| s.weight.is_some())
                    .filter_map(|s| {
                        let e = s.estimate.as_ref()?;
                        Some((e.value, s.ess.as_ref().and_then(|v| v[j])))
                    })
                    .collect();
                stitched_n_eff(&parts)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: Manifest,
    pub tree: PartitionTree,
    pub exploration: ExplorationSampleSet,
    pub samples: WeightedSampleSet,
    pub subspace_samples: Vec<SubspaceSamples>,
}

impl RunResult {
    pub fn total(&self) -> TotalIntegral {
        self.samples.total
    }

    pub fn degraded(&self) -> bool {
        self.samples.total.degraded
    }
}

/// Runs the pipeline on a pool of [`RunPlan::effective_workers`] threads.
pub fn run_pipeline(plan: &RunPlan) -> Result<RunResult> {
    plan.validate()?;
    let target = plan.target.resolve()?;
    let pool = WorkerPool::new(plan.effective_workers()?);
    run_pipeline_on(plan, &target, &pool)
}

fn empty_samples(index: usize, dim: usize, n_chains: usize) -> SubspaceSamples {
    SubspaceSamples {
        index,
        samples: SampleMatrix::new(dim),
        log_densities: Vec::new(),
        chain_ids: Vec::new(),
        n_chains,
        timing: TaskTiming::default(),
        tuning: TuningReport::default(),
        acceptance: 0.0,
    }
}

struct TaskOutput {
    samples: Option<SubspaceSamples>,
    estimate: Option<IntegralEstimate>,
    timing: TaskTiming,
    error: Option<String>,
}

/// Runs the pipeline for an already resolved target on `exec`. Fixed-count
/// output depends only on the plan and target, never on the executor.
pub fn run_pipeline_on(plan: &RunPlan, target: &Target, exec: &dyn Executor) -> Result<RunResult> {
    plan.validate()?;
    let integrator = plan.integrator_impl()?;
    let t0 = Instant::now();
    let mut warnings = Vec::new();

    let exploration = explore_on(target, &plan.exploration, plan.seed, exec)?;
    let t_explore = t0.elapsed().as_secs_f64();

    let tree = build_tree(&exploration.points, &target.support, &plan.partition)?;
    let t_partition = t0.elapsed().as_secs_f64() - t_explore;

    // exploration points handed to each leaf as chain starts
    let mut starts: Vec<Vec<Vec<f64>>> = vec![Vec::new(); tree.n_leaves()];
    for row in exploration.points.rows() {
        starts[tree.locate(row)?].push(row.to_vec());
    }

    let t_phase = Instant::now();
    let outputs: Vec<TaskOutput> = map_indexed(exec, tree.n_leaves(), |k| {
        let leaf = &tree.leaves()[k];
        let start = Instant::now();
        let seed = derive_subspace_seed(plan.seed, k);
        let sampled = sample_subspace(target.density.as_ref(), k, &leaf.bx, &starts[k], &plan.sampling, seed);
        match sampled {
            Ok(s) => {
                let (est, cpu) = with_cpu_time(|| integrator.integrate(&s, &leaf.bx));
                let timing = TaskTiming {
                    wall_seconds: start.elapsed().as_secs_f64(),
                    cpu_seconds: s.timing.cpu_seconds + cpu.as_secs_f64(),
                };
                let (estimate, error) = match est {
                    Ok(e) => (Some(e), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                TaskOutput {
                    samples: Some(s),
                    estimate,
                    timing,
                    error,
                }
            }
            Err(e) => TaskOutput {
                samples: None,
                estimate: None,
                timing: TaskTiming {
                    wall_seconds: start.elapsed().as_secs_f64(),
                    cpu_seconds: 0.0,
                },
                error: Some(e.to_string()),
            },
        }
    });
    let t_subspaces = t_phase.elapsed().as_secs_f64();

    let t_stitch = Instant::now();
    let dim = target.dim();
    let mut subspaces = Vec::with_capacity(outputs.len());
    let mut subspace_samples = Vec::with_capacity(outputs.len());
    let mut estimates = Vec::with_capacity(outputs.len());
    for (k, out) in outputs.into_iter().enumerate() {
        let leaf = &tree.leaves()[k];
        let s = out
            .samples
            .unwrap_or_else(|| empty_samples(k, dim, plan.sampling.n_chains));
        if let Some(err) = &out.error {
            warnings.push(format!("subspace {k} failed: {err}"));
        } else if !s.converged() {
            warnings.push(format!("subspace {k} did not converge during burn-in"));
        }
        subspaces.push(SubspaceReport {
            index: k,
            bx: leaf.bx.clone(),
            exploration_count: leaf.exploration_count,
            seed: derive_subspace_seed(plan.seed, k),
            n_samples: s.len(),
            n_chains: s.n_chains,
            weight: out
                .estimate
                .as_ref()
                .filter(|_| !s.is_empty())
                .map(|e| e.value / s.len() as f64),
            estimate: out.estimate.clone(),
            timing: out.timing,
            tuning: (out.error.is_none() || !s.is_empty()).then(|| s.tuning.clone()),
            acceptance: (!s.is_empty()).then_some(s.acceptance),
            ess: (s.len() >= 10).then(|| group_ess(&s.samples, &s.chain_ranges())),
            error: out.error,
        });
        estimates.push(out.estimate);
        subspace_samples.push(s);
    }
    let reproducible = plan.sampling.mode.is_reproducible();
    if !reproducible {
        warnings.push("wall-clock sampling: sample counts depend on machine speed".into());
    }
    if target.known_integral.is_some() {
        warnings.push(format!(
            "support box {:?}..{:?} is a modelling choice; mass outside it is ignored",
            target.support.lower(),
            target.support.upper()
        ));
    }

    let timing = RunTiming {
        n_subspaces: tree.n_leaves(),
        n_samples: subspace_samples.iter().map(|s| s.len()).sum(),
        max_wall_seconds: subspaces.iter().map(|s| s.timing.wall_seconds).fold(0.0, f64::max),
        total_cpu_seconds: subspaces.iter().map(|s| s.timing.cpu_seconds).sum(),
    };
    let mut manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        plan: plan.clone(),
        workers: exec.workers(),
        target_name: target.name.clone(),
        support: target.support.clone(),
        known_integral: target.known_integral,
        reproducible,
        n_exploration: exploration.len(),
        tree: tree.to_json(),
        subspaces,
        total: None,
        n_samples: 0,
        ess: None,
        timing: Some(timing),
        phases: PhaseTimes {
            exploration_seconds: t_explore,
            partition_seconds: t_partition,
            subspace_phase_seconds: t_subspaces,
            stitch_seconds: 0.0,
            total_seconds: 0.0,
        },
        warnings,
    };

    let parts: Vec<(&SubspaceSamples, Option<&IntegralEstimate>)> = subspace_samples
        .iter()
        .zip(&estimates)
        .map(|(s, e)| (s, e.as_ref()))
        .collect();
    let samples = match stitch(&parts) {
        Ok(ws) => ws,
        Err(Error::EmptyResult) => {
            manifest.warnings.push("every subspace failed".into());
            manifest.phases.total_seconds = t0.elapsed().as_secs_f64();
            return Err(Error::PipelineFailed(Box::new(manifest)));
        }
        Err(e) => return Err(e),
    };
    for k in &samples.skipped {
        manifest
            .warnings
            .push(format!("subspace {k} contributes no samples; its mass is unknown"));
    }
    manifest.ess = run_ess(&manifest.subspaces, samples.len(), dim);
    manifest.total = Some(samples.total);
    manifest.n_samples = samples.len();
    manifest.phases.stitch_seconds = t_stitch.elapsed().as_secs_f64();
    manifest.phases.total_seconds = t0.elapsed().as_secs_f64();

    Ok(RunResult {
        manifest,
        tree,
        exploration,
        samples,
        subspace_samples,
    })
}

/// Run ESS: per dimension, the sum over stitched subspaces of their
/// multi-chain ESS.
fn run_ess(subspaces: &[SubspaceReport], n: usize, dim: usize) -> Option<EssReport> {
    let used: Vec<&Vec<Option<f64>>> = subspaces
        .iter()
        .filter(|s| s.weight.is_some())
        .filter_map(|s| s.ess.as_ref())
        .collect();
    if used.is_empty() || n < 10 {
        return None;
    }
    let n_eff = (0..dim)
        .map(|j| {
            let vals: Vec<f64> = used.iter().filter_map(|e| e[j]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum())
        })
        .collect();
    Some(EssReport::from_n_eff(n, n_eff))
}

/// Contiguous ranges of each (subspace, chain) pair in a stitched set.
pub fn run_chain_ranges(ws: &WeightedSampleSet) -> Vec<std::ops::Range<usize>> {
    let keys: Vec<(u32, u32)> = ws
        .subspace_ids
        .iter()
        .copied()
        .zip(ws.chain_ids.iter().copied())
        .collect();
    crate::sampler::contiguous_runs(&keys)
}
