//! Random-walk Metropolis-Hastings restricted to a subspace box.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::split_rhat;
use crate::error::{Error, Result};
use crate::matrix::SampleMatrix;
use crate::rng::{chain_rng, derive_chain_seed, ChainRng};
use crate::target::{LogDensity, ParameterBox};
use crate::timing::with_cpu_time;

/// State of one Metropolis-Hastings chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    position: Vec<f64>,
    log_density: f64,
    /// Per-axis standard deviations of the Gaussian proposal.
    pub scale: Vec<f64>,
    rng: ChainRng,
    proposal: Vec<f64>,
    pub accepted: u64,
    pub proposed: u64,
}

impl ChainState {
    pub fn new(position: Vec<f64>, log_density: f64, scale: Vec<f64>, rng: ChainRng) -> Self {
        assert_eq!(position.len(), scale.len());
        let dim = position.len();
        Self {
            position,
            log_density,
            scale,
            rng,
            proposal: vec![0.0; dim],
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn position(&self) -> &[f64] {
        &self.position
    }

    pub fn log_density(&self) -> f64 {
        self.log_density
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counters(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    pub fn rng_mut(&mut self) -> &mut ChainRng {
        &mut self.rng
    }
}

/// One Metropolis-Hastings transition. Proposals outside `bx` have zero
/// density and are rejected. Returns whether the proposal was accepted.
pub fn mh_step(state: &mut ChainState, target: &dyn LogDensity, bx: &ParameterBox) -> Result<bool> {
    state.proposed += 1;
    let mut inside = true;
    for j in 0..state.position.len() {
        let z: f64 = state.rng.sample(StandardNormal);
        let y = state.position[j] + state.scale[j] * z;
        inside &= y >= bx.lower()[j] && y <= bx.upper()[j];
        state.proposal[j] = y;
    }
    // the uniform is drawn unconditionally so the stream layout does not
    // depend on where proposals land
    let u: f64 = state.rng.random();
    if !inside {
        return Ok(false);
    }
    let lp = target.log_density(&state.proposal);
    if lp.is_nan() {
        return Err(Error::CorruptTarget);
    }
    if lp == f64::NEG_INFINITY {
        return Ok(false);
    }
    if u.ln() < lp - state.log_density {
        std::mem::swap(&mut state.position, &mut state.proposal);
        state.log_density = lp;
        state.accepted += 1;
        Ok(true)
    } else {
        Ok(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SamplingMode {
    /// Exactly this many retained samples per chain.
    FixedCount { samples_per_chain: usize },
    /// Keep sampling until this much wall-clock time has passed since the
    /// subspace task started.
    WallClock { seconds: f64 },
}

impl SamplingMode {
    pub fn is_reproducible(&self) -> bool {
        matches!(self, SamplingMode::FixedCount { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubspaceRunConfig {
    pub n_chains: usize,
    pub mode: SamplingMode,
    pub burnin_max_cycles: usize,
    /// Steps per chain in each tuning cycle.
    pub tuning_window: usize,
    /// Acceptance rates regarded as tuned.
    pub accept_window: (f64, f64),
    /// Acceptance the scale adaptation steers toward.
    pub accept_target: f64,
    /// Rate of the multiplicative update `exp(rate * (acc - target))`.
    pub adapt_rate: f64,
    pub rhat_threshold: f64,
    /// Initial proposal std dev as a fraction of each box side.
    pub initial_scale_fraction: f64,
    /// Threads used to advance chains inside one subspace task.
    pub threads_per_worker: usize,
    pub max_init_attempts: usize,
}

impl Default for SubspaceRunConfig {
    fn default() -> Self {
        Self {
            n_chains: 10,
            mode: SamplingMode::FixedCount {
                samples_per_chain: 1000,
            },
            burnin_max_cycles: 30,
            tuning_window: 500,
            accept_window: (0.2, 0.45),
            accept_target: 0.3,
            adapt_rate: 1.0,
            rhat_threshold: 1.1,
            initial_scale_fraction: 0.05,
            threads_per_worker: 1,
            max_init_attempts: 1000,
        }
    }
}

impl SubspaceRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::invalid("n_chains must be at least 1"));
        }
        if self.tuning_window < 2 {
            return Err(Error::invalid("tuning_window must be at least 2"));
        }
        let (lo, hi) = self.accept_window;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::invalid("accept_window must satisfy 0 < lo < hi < 1"));
        }
        if !(self.rhat_threshold > 1.0) {
            return Err(Error::invalid("rhat_threshold must exceed 1"));
        }
        if !(self.adapt_rate > 0.0 && self.initial_scale_fraction > 0.0) {
            return Err(Error::invalid("adapt_rate and initial_scale_fraction must be positive"));
        }
        if let SamplingMode::WallClock { seconds } = self.mode {
            if !(seconds >= 0.0 && seconds.is_finite()) {
                return Err(Error::invalid("wall-clock budget must be a non-negative number"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    /// Wall-clock seconds from task start to finish.
    pub wall_seconds: f64,
    /// CPU seconds summed over every thread that worked on the task.
    pub cpu_seconds: f64,
}

/// Outcome of the burn-in phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub converged: bool,
    pub cycles: usize,
    /// Largest split-R̂ over dimensions in the last cycle; `None` for a
    /// single chain.
    pub rhat: Option<f64>,
    pub acceptance: Vec<f64>,
}

/// Samples of one subspace, concatenated chain by chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSamples {
    pub index: usize,
    pub samples: SampleMatrix,
    pub log_densities: Vec<f64>,
    pub chain_ids: Vec<u32>,
    pub n_chains: usize,
    pub timing: TaskTiming,
    pub tuning: TuningReport,
    /// Mean acceptance rate over chains during the retained phase.
    pub acceptance: f64,
}

impl SubspaceSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn converged(&self) -> bool {
        self.tuning.converged
    }

    /// Contiguous row ranges, one per chain that emitted samples.
    pub fn chain_ranges(&self) -> Vec<std::ops::Range<usize>> {
        contiguous_runs(&self.chain_ids)
    }
}

pub(crate) fn contiguous_runs<T: PartialEq>(ids: &[T]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=ids.len() {
        if i == ids.len() || ids[i] != ids[start] {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Runs `f` on every chain, spreading chains over `threads` scoped threads.
/// Returns the summed thread CPU time.
fn for_each_chain<F>(chains: &mut [ChainState], threads: usize, f: F) -> Result<Duration>
where
    F: Fn(usize, &mut ChainState) -> Result<()> + Sync,
{
    let threads = threads.clamp(1, chains.len().max(1));
    if threads == 1 {
        let (res, cpu) = with_cpu_time(|| chains.iter_mut().enumerate().try_for_each(|(i, c)| f(i, c)));
        return res.map(|_| cpu);
    }
    let per = chains.len().div_ceil(threads);
    let f = &f;
    let results: Vec<(Result<()>, Duration)> = std::thread::scope(|scope| {
        let handles: Vec<_> = chains
            .chunks_mut(per)
            .enumerate()
            .map(|(t, chunk)| {
                scope.spawn(move || {
                    with_cpu_time(|| chunk.iter_mut().enumerate().try_for_each(|(i, c)| f(t * per + i, c)))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    let mut cpu = Duration::ZERO;
    for (res, d) in results {
        res?;
        cpu += d;
    }
    Ok(cpu)
}

/// Adapts proposal scales and burns in until the chains agree (split-R̂
/// below threshold on every axis) and every chain's acceptance sits in the
/// accept window, or the cycle budget runs out. Tuning draws are discarded.
pub fn tune_and_burnin(
    chains: &mut [ChainState],
    target: &dyn LogDensity,
    bx: &ParameterBox,
    cfg: &SubspaceRunConfig,
    deadline: Option<Instant>,
) -> Result<(TuningReport, Duration)> {
    if chains.is_empty() {
        return Err(Error::invalid("tuning needs at least one chain"));
    }
    let dim = bx.dim();
    let window = cfg.tuning_window;
    let mut cpu = Duration::ZERO;
    let mut report = TuningReport {
        converged: false,
        cycles: 0,
        rhat: None,
        acceptance: vec![0.0; chains.len()],
    };
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(window * dim); chains.len()];
    for cycle in 0..cfg.burnin_max_cycles {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let trace_slots: Vec<std::sync::Mutex<&mut Vec<f64>>> = traces.iter_mut().map(std::sync::Mutex::new).collect();
        cpu += for_each_chain(chains, cfg.threads_per_worker, |i, chain| {
            let mut trace = trace_slots[i].lock().unwrap();
            trace.clear();
            chain.reset_counters();
            for _ in 0..window {
                mh_step(chain, target, bx)?;
                trace.extend_from_slice(chain.position());
            }
            Ok(())
        })?;
        drop(trace_slots);
        report.cycles = cycle + 1;
        report.acceptance = chains.iter().map(ChainState::acceptance_rate).collect();
        let (lo, hi) = cfg.accept_window;
        let tuned = report.acceptance.iter().all(|a| *a >= lo && *a <= hi);
        report.rhat = if chains.len() >= 2 {
            let worst = (0..dim)
                .map(|j| {
                    let cols: Vec<Vec<f64>> = traces
                        .iter()
                        .map(|t| t.iter().skip(j).step_by(dim).copied().collect())
                        .collect();
                    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                    split_rhat(&refs)
                })
                .fold(1.0f64, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
            Some(worst)
        } else {
            None
        };
        let mixed = report.rhat.is_none_or(|r| r < cfg.rhat_threshold);
        if tuned && mixed {
            report.converged = true;
            break;
        }
        for chain in chains.iter_mut() {
            let factor = (cfg.adapt_rate * (chain.acceptance_rate() - cfg.accept_target)).exp();
            chain.scale.iter_mut().for_each(|s| *s *= factor);
        }
    }
    for c in chains.iter_mut() {
        c.reset_counters();
    }
    Ok((report, cpu))
}

/// Draws a starting point uniformly in `bx` with finite density.
pub fn uniform_start<R: Rng + ?Sized>(
    target: &dyn LogDensity,
    bx: &ParameterBox,
    rng: &mut R,
    max_attempts: usize,
) -> Result<(Vec<f64>, f64)> {
    for _ in 0..max_attempts.max(1) {
        let x = bx.sample_uniform(rng);
        let lp = target.log_density(&x);
        if lp.is_nan() {
            return Err(Error::CorruptTarget);
        }
        if lp > f64::NEG_INFINITY {
            return Ok((x, lp));
        }
    }
    Err(Error::InitializationFailure {
        attempts: max_attempts.max(1),
    })
}

/// Picks up to `n` starting points spread evenly over `candidates`.
fn pick_spread(candidates: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if candidates.len() <= n {
        return candidates.to_vec();
    }
    (0..n).map(|i| candidates[i * candidates.len() / n].clone()).collect()
}

/// Tunes, burns in and samples `cfg.n_chains` chains in `bx`.
///
/// Chains start at `init_points` that lie inside the box (spread evenly over
/// the list), padded with uniform draws. Chain `c` uses the stream
/// `derive_chain_seed(seed, c)`, so the output depends only on the inputs.
pub fn sample_subspace(
    target: &dyn LogDensity,
    index: usize,
    bx: &ParameterBox,
    init_points: &[Vec<f64>],
    cfg: &SubspaceRunConfig,
    seed: u64,
) -> Result<SubspaceSamples> {
    cfg.validate()?;
    let start = Instant::now();
    let deadline = match cfg.mode {
        SamplingMode::WallClock { seconds } => Some(start + Duration::from_secs_f64(seconds)),
        SamplingMode::FixedCount { .. } => None,
    };
    let dim = bx.dim();
    let scale0: Vec<f64> = (0..dim).map(|j| cfg.initial_scale_fraction * bx.side(j)).collect();

    let inside: Vec<Vec<f64>> = init_points
        .iter()
        .filter(|p| bx.contains(p) && target.log_density(p) > f64::NEG_INFINITY)
        .cloned()
        .collect();
    let starts = pick_spread(&inside, cfg.n_chains);
    let (init, mut cpu) = with_cpu_time(|| -> Result<Vec<ChainState>> {
        (0..cfg.n_chains)
            .map(|c| {
                let mut rng = chain_rng(derive_chain_seed(seed, c));
                let (x, lp) = match starts.get(c) {
                    Some(p) => (p.clone(), target.log_density(p)),
                    None => uniform_start(target, bx, &mut rng, cfg.max_init_attempts)?,
                };
                Ok(ChainState::new(x, lp, scale0.clone(), rng))
            })
            .collect()
    });
    let mut chains = init?;

    let (tuning, tune_cpu) = tune_and_burnin(&mut chains, target, bx, cfg, deadline)?;
    cpu += tune_cpu;

    let per_chain: Vec<std::sync::Mutex<(Vec<f64>, Vec<f64>)>> =
        (0..chains.len()).map(|_| Default::default()).collect();
    let sample_cpu = match cfg.mode {
        SamplingMode::FixedCount { samples_per_chain } => {
            for_each_chain(&mut chains, cfg.threads_per_worker, |i, chain| {
                let mut slot = per_chain[i].lock().unwrap();
                let (xs, lps) = &mut *slot;
                xs.reserve(samples_per_chain * dim);
                lps.reserve(samples_per_chain);
                for _ in 0..samples_per_chain {
                    mh_step(chain, target, bx)?;
                    xs.extend_from_slice(chain.position());
                    lps.push(chain.log_density());
                }
                Ok(())
            })?
        }
        SamplingMode::WallClock { .. } => {
            let deadline = deadline.expect("wall-clock mode has a deadline");
            let threads = cfg.threads_per_worker.clamp(1, chains.len());
            let per = chains.len().div_ceil(threads);
            // each thread advances its chains round-robin in short bursts
            let groups: Vec<std::ops::Range<usize>> = (0..chains.len())
                .step_by(per)
                .map(|s| s..(s + per).min(chains.len()))
                .collect();
            let mut group_chains: Vec<&mut [ChainState]> = Vec::new();
            let mut rest: &mut [ChainState] = &mut chains;
            for g in &groups {
                let (head, tail) = rest.split_at_mut(g.len());
                group_chains.push(head);
                rest = tail;
            }
            let run_group = |offset: usize, group: &mut [ChainState]| -> (Result<()>, Duration) {
                with_cpu_time(|| {
                    const BURST: usize = 64;
                    while Instant::now() < deadline {
                        for (k, chain) in group.iter_mut().enumerate() {
                            let mut slot = per_chain[offset + k].lock().unwrap();
                            let (xs, lps) = &mut *slot;
                            for _ in 0..BURST {
                                mh_step(chain, target, bx)?;
                                xs.extend_from_slice(chain.position());
                                lps.push(chain.log_density());
                            }
                        }
                    }
                    Ok(())
                })
            };
            let results: Vec<(Result<()>, Duration)> = if group_chains.len() == 1 {
                vec![run_group(0, group_chains.pop().unwrap())]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = group_chains
                        .into_iter()
                        .zip(&groups)
                        .map(|(g, r)| {
                            let run_group = &run_group;
                            scope.spawn(move || run_group(r.start, g))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("chain thread panicked"))
                        .collect()
                })
            };
            let mut total = Duration::ZERO;
            for (res, d) in results {
                res?;
                total += d;
            }
            total
        }
    };
    cpu += sample_cpu;

    let (out, merge_cpu) = with_cpu_time(|| {
        let mut samples = SampleMatrix::new(dim);
        let mut log_densities = Vec::new();
        let mut chain_ids = Vec::new();
        for (c, slot) in per_chain.into_iter().enumerate() {
            let (xs, lps) = slot.into_inner().unwrap();
            chain_ids.extend(std::iter::repeat_n(c as u32, lps.len()));
            samples.extend(&SampleMatrix::from_flat(dim, xs));
            log_densities.extend(lps);
        }
        (samples, log_densities, chain_ids)
    });
    cpu += merge_cpu;
    let (samples, log_densities, chain_ids) = out;
    debug_assert!(samples.rows().all(|r| bx.contains(r)));
    let acceptance = chains.iter().map(ChainState::acceptance_rate).sum::<f64>() / chains.len() as f64;
    Ok(SubspaceSamples {
        index,
        samples,
        log_densities,
        chain_ids,
        n_chains: chains.len(),
        timing: TaskTiming {
            wall_seconds: start.elapsed().as_secs_f64(),
            cpu_seconds: cpu.as_secs_f64(),
        },
        tuning,
        acceptance,
    })
}
