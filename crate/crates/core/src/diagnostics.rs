//! Effective sample size, convergence and two-sample diagnostics, and the
//! sampling-rate metrics used to compare partitioned runs with a baseline.

use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SampleMatrix;

/// Above this many multiply-adds the autocovariance goes through an FFT.
const DIRECT_WORK_LIMIT: usize = 1 << 22;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `ĉ(τ) = 1/(N-τ) Σ_{i<N-τ} (x_i - x̄)(x_{i+τ} - x̄)` for `τ = 0..=max_lag`.
///
/// Errors if `N < 2` or `max_lag >= N`. A constant series yields `ĉ(0) = 0`.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::invalid("autocovariance needs at least two values"));
    }
    if max_lag >= n {
        return Err(Error::invalid(format!(
            "max_lag {max_lag} must be below series length {n}"
        )));
    }
    let m = mean(series);
    let centred: Vec<f64> = series.iter().map(|x| x - m).collect();
    let sums = if n.saturating_mul(max_lag + 1) <= DIRECT_WORK_LIMIT {
        lagged_products_direct(&centred, max_lag)
    } else {
        lagged_products_fft(&centred, max_lag)
    };
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(tau, s)| s / (n - tau) as f64)
        .collect())
}

fn lagged_products_direct(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|tau| x[..x.len() - tau].iter().zip(&x[tau..]).map(|(a, b)| a * b).sum())
        .collect()
}

fn lagged_products_fft(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf[..=max_lag].iter().map(|c| c.re / len as f64).collect()
}

/// Normalized autocorrelation `ρ̂(τ) = ĉ(τ)/ĉ(0)`; `None` for a constant
/// series.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Option<Vec<f64>>> {
    let c = autocovariance(series, max_lag)?;
    if !(c[0] > 0.0) {
        return Ok(None);
    }
    let c0 = c[0];
    Ok(Some(c.into_iter().map(|v| v / c0).collect()))
}

/// Integrated autocorrelation time `1 + 2 Σ ρ̂(τ)`, truncated by Geyer's
/// initial monotone sequence rule.
///
/// Pair sums `Γ_m = ρ̂(2m) + ρ̂(2m+1)` are accumulated until the first
/// non-positive one; each is capped by its predecessor so the sequence is
/// non-increasing. The result is `-1 + 2 Σ Γ_m`, clipped to at least 1.
pub fn integrated_autocorr_time(rho: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for pair in rho.chunks_exact(2) {
        let gamma = pair[0] + pair[1];
        if gamma <= 0.0 {
            break;
        }
        let g = gamma.min(prev);
        sum += g;
        prev = g;
    }
    (-1.0 + 2.0 * sum).max(1.0)
}

/// `τ̂` of a single series, with lags computed in growing blocks until the
/// Geyer cutoff is reached (`max_lag` defaults to `N/2`). `None` for a
/// constant series.
pub fn series_autocorr_time(series: &[f64]) -> Option<f64> {
    let n = series.len();
    if n < 4 {
        return if n >= 2 && series.iter().any(|v| *v != series[0]) {
            Some(1.0)
        } else {
            None
        };
    }
    let cap = n / 2;
    let mut lag = 64.min(cap);
    loop {
        let rho = autocorrelation(series, lag).ok()??;
        let cut = rho.chunks_exact(2).position(|p| p[0] + p[1] <= 0.0);
        if cut.is_some() || lag >= cap {
            return Some(integrated_autocorr_time(&rho));
        }
        lag = (lag * 4).min(cap);
    }
}

/// Split-R̂ over chains of equal role: each chain is halved, and the
/// potential scale reduction is computed over the halves.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    if n < 2 || chains.is_empty() {
        return f64::NAN;
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let c = &c[c.len() - 2 * n..];
            [&c[..n], &c[n..]]
        })
        .collect();
    let k = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = means.iter().sum::<f64>() / k;
    let b_over_n = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / k;
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if w > 0.0 {
        (var_plus / w).sqrt()
    } else if b_over_n > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Per-dimension effective sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    /// Total number of samples.
    pub n: usize,
    /// `N / N_eff` per dimension; `None` for dimensions that never vary.
    pub tau: Vec<Option<f64>>,
    pub n_eff: Vec<Option<f64>>,
    pub mean_n_eff: f64,
    /// Standard deviation of `N_eff` across dimensions.
    pub std_n_eff: f64,
    /// Dimensions excluded from the summary statistics.
    pub flagged: Vec<usize>,
}

impl EssReport {
    pub fn from_n_eff(n: usize, n_eff: Vec<Option<f64>>) -> Self {
        let tau = n_eff.iter().map(|e| e.map(|v| n as f64 / v)).collect();
        let flagged: Vec<usize> = n_eff
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_none())
            .map(|(j, _)| j)
            .collect();
        let good: Vec<f64> = n_eff.iter().flatten().copied().collect();
        let (mean_n_eff, std_n_eff) = match good.len() {
            0 => (0.0, 0.0),
            1 => (good[0], 0.0),
            k => {
                let m = good.iter().sum::<f64>() / k as f64;
                let v = good.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k as f64 - 1.0);
                (m, v.sqrt())
            }
        };
        Self {
            n,
            tau,
            n_eff,
            mean_n_eff,
            std_n_eff,
            flagged,
        }
    }

    /// Mean of `N_eff / N` across unflagged dimensions.
    pub fn mean_fraction(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.mean_n_eff / self.n as f64
        }
    }

    pub fn std_fraction(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std_n_eff / self.n as f64
        }
    }
}

/// ESS of one contiguous series per dimension: `N_eff,k = N / τ̂_k`.
pub fn ess_report(columns: &[Vec<f64>]) -> Result<EssReport> {
    let n = columns.first().map_or(0, Vec::len);
    if n < 10 {
        return Err(Error::invalid("ESS needs at least 10 samples"));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("ESS columns have different lengths"));
    }
    let n_eff = columns
        .iter()
        .map(|c| series_autocorr_time(c).map(|t| n as f64 / t))
        .collect();
    Ok(EssReport::from_n_eff(n, n_eff))
}

/// ESS of a sample made of several independent chains: each row range in
/// `chains` is one contiguous chain, its `N_c / τ̂_c` is computed separately,
/// and the per-chain values are summed. A chain that is constant along a
/// dimension counts as a single effective draw there.
pub fn ess_report_chains(samples: &SampleMatrix, chains: &[Range<usize>]) -> Result<EssReport> {
    let n: usize = chains.iter().map(|r| r.len()).sum();
    if n < 10 {
        return Err(Error::invalid("ESS needs at least 10 samples"));
    }
    let dim = samples.dim();
    let n_eff = (0..dim)
        .map(|j| {
            let mut total = 0.0;
            let mut varies = false;
            let mut first: Option<f64> = None;
            for r in chains {
                let col: Vec<f64> = r.clone().map(|i| samples.row(i)[j]).collect();
                match first {
                    None => first = col.first().copied(),
                    Some(f) => varies |= col.iter().any(|v| *v != f),
                }
                match series_autocorr_time(&col) {
                    Some(t) => {
                        varies = true;
                        total += col.len() as f64 / t;
                    }
                    None if !col.is_empty() => total += 1.0,
                    None => {}
                }
            }
            varies.then_some(total)
        })
        .collect();
    Ok(EssReport::from_n_eff(n, n_eff))
}

/// ESS of a group of chains targeting the same distribution, with the
/// between-chain spread folded into the autocorrelation:
///
/// ```text
/// var⁺ = (n-1)/n · W + B/n,   ρ̂(τ) = 1 - (W - mean_c ĉ_c(τ)) / var⁺
/// ```
///
/// where `W` is the mean within-chain variance and `B/n` the variance of the
/// chain means. Chains are cut to the shortest length. The Geyer-truncated
/// `τ̂` of `ρ̂` gives `N_eff = m·n/τ̂`. Chains stuck in different regions
/// inflate `var⁺` and so shrink `N_eff`; a single chain reduces to
/// `n/τ̂` of that chain. `None` if every chain is constant.
pub fn multichain_ess(chains: &[&[f64]]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min()?;
    if n < 4 {
        return None;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b_over_n = if m > 1 {
        means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    let nf = n as f64;
    let mut lag = 64.min(n / 2);
    loop {
        let acov: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| autocovariance(c, lag).expect("lag below length"))
            .collect();
        // ĉ(0) uses 1/n; the unbiased within-chain variance is n/(n-1) times it
        let w = acov.iter().map(|a| a[0]).sum::<f64>() / m as f64 * nf / (nf - 1.0);
        let var_plus = (nf - 1.0) / nf * w + b_over_n;
        if !(var_plus > 0.0) {
            return None;
        }
        let rho: Vec<f64> = (0..=lag)
            .map(|t| {
                let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
                1.0 - (w - mean_acov) / var_plus
            })
            .collect();
        let cut = rho.chunks_exact(2).position(|p| p[0] + p[1] <= 0.0);
        if cut.is_some() || lag >= n / 2 {
            let tau = integrated_autocorr_time(&rho);
            return Some((m as f64 * nf / tau).min(m as f64 * nf));
        }
        lag = (lag * 4).min(n / 2);
    }
}

/// ESS of a run made of independent groups of chains (one group per
/// subspace). Each group's [`multichain_ess`] is computed separately and the
/// group values are summed.
pub fn ess_report_groups(samples: &SampleMatrix, groups: &[Vec<Range<usize>>]) -> Result<EssReport> {
    let n: usize = groups.iter().flatten().map(|r| r.len()).sum();
    if n < 10 {
        return Err(Error::invalid("ESS needs at least 10 samples"));
    }
    let n_eff = (0..samples.dim())
        .map(|j| {
            let mut total = 0.0;
            let mut any = false;
            for g in groups {
                let cols: Vec<Vec<f64>> = g
                    .iter()
                    .map(|r| r.clone().map(|i| samples.row(i)[j]).collect())
                    .collect();
                let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                if let Some(e) = multichain_ess(&refs) {
                    total += e;
                    any = true;
                }
            }
            any.then_some(total)
        })
        .collect();
    Ok(EssReport::from_n_eff(n, n_eff))
}

/// Per-dimension [`multichain_ess`] of one group of chains given as row
/// ranges of `samples`.
pub fn group_ess(samples: &SampleMatrix, chains: &[Range<usize>]) -> Vec<Option<f64>> {
    (0..samples.dim())
        .map(|j| {
            let cols: Vec<Vec<f64>> = chains
                .iter()
                .map(|r| r.clone().map(|i| samples.row(i)[j]).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            multichain_ess(&refs)
        })
        .collect()
}

/// Effective size of a stitched sample whose part `k` has total weight
/// `W_k` and effective size `ESS_k`:
///
/// ```text
/// n_eff = (Σ W_k)² / Σ (W_k² / ESS_k)
/// ```
///
/// This is the variance-equivalent count of a weighted mean over parts. A
/// part with no effective size counts as one draw.
pub fn stitched_n_eff(parts: &[(f64, Option<f64>)]) -> f64 {
    let total: f64 = parts.iter().map(|(w, _)| w).sum();
    let denom: f64 = parts
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, e)| w * w / e.unwrap_or(1.0).max(1.0))
        .sum();
    if denom > 0.0 {
        total * total / denom
    } else {
        0.0
    }
}

/// Result of a two-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// `n_a n_b / (n_a + n_b)` from the effective sizes.
    pub n_effective: f64,
}

/// Sorted values with weights normalized to sum to one.
fn weighted_ecdf(values: &[f64], weights: Option<&[f64]>) -> Result<Vec<(f64, f64)>> {
    let mut pts: Vec<(f64, f64)> = match weights {
        Some(w) => {
            if w.len() != values.len() {
                return Err(Error::invalid("weights and values differ in length"));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid("weights must be finite and non-negative"));
            }
            values.iter().copied().zip(w.iter().copied()).collect()
        }
        None => values.iter().map(|&v| (v, 1.0)).collect(),
    };
    if pts.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::invalid("sample contains NaN"));
    }
    let total: f64 = pts.iter().map(|p| p.1).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("sample has zero total weight"));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for p in pts.iter_mut() {
        p.1 /= total;
    }
    Ok(pts)
}

/// Two-sample KS test with optional weights on either side.
///
/// `D = sup |F_a - F_b|` over weighted ECDFs; the p-value is the asymptotic
/// Kolmogorov tail at `sqrt(n) D` with `n = n_a n_b / (n_a + n_b)` built from
/// the supplied effective sizes.
pub fn ks_two_sample(
    a: &[f64],
    weights_a: Option<&[f64]>,
    b: &[f64],
    weights_b: Option<&[f64]>,
    n_eff_a: f64,
    n_eff_b: f64,
) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS test needs two non-empty samples"));
    }
    if !(n_eff_a > 0.0 && n_eff_b > 0.0) {
        return Err(Error::invalid("KS test needs positive effective sample sizes"));
    }
    let fa = weighted_ecdf(a, weights_a)?;
    let fb = weighted_ecdf(b, weights_b)?;
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < fa.len() || j < fb.len() {
        let next = match (fa.get(i), fb.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        while i < fa.len() && fa[i].0 <= next {
            ca += fa[i].1;
            i += 1;
        }
        while j < fb.len() && fb[j].0 <= next {
            cb += fb[j].1;
            j += 1;
        }
        d = d.max((ca - cb).abs());
    }
    let d = d.min(1.0);
    let n = n_eff_a * n_eff_b / (n_eff_a + n_eff_b);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(n.sqrt() * d),
        n_effective: n,
    })
}

/// KS test of every marginal of a weighted sample against a reference
/// sample of independent draws. `n_eff[j]` is the effective size of the
/// weighted sample along dimension `j`; the reference counts at its raw size.
pub fn marginal_ks(
    samples: &SampleMatrix,
    weights: &[f64],
    reference: &SampleMatrix,
    n_eff: &[f64],
) -> Result<Vec<KsResult>> {
    if samples.dim() != reference.dim() || n_eff.len() != samples.dim() {
        return Err(Error::DimensionMismatch {
            expected: samples.dim(),
            got: if reference.dim() != samples.dim() {
                reference.dim()
            } else {
                n_eff.len()
            },
        });
    }
    (0..samples.dim())
        .map(|j| {
            let a = samples.column(j);
            let b = reference.column(j);
            ks_two_sample(&a, Some(weights), &b, None, n_eff[j], b.len() as f64)
        })
        .collect()
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`.
///
/// Small `λ` use the equivalent theta-function form, which converges where
/// the alternating series does not. Both series stop after 100 terms or once
/// a term drops below 1e-10 of the running sum.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    const MAX_TERMS: usize = 100;
    const TAIL: f64 = 1e-10;
    if lambda < 1.18 {
        // 1 - sqrt(2π)/λ Σ exp(-(2j-1)² π² / (8 λ²))
        let k = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for j in 1..=MAX_TERMS {
            let t = (((2 * j - 1) as f64).powi(2) * k).exp();
            sum += t;
            if t <= TAIL * sum {
                break;
            }
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1..=MAX_TERMS {
            let t = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
            sum += sign * t;
            if t <= TAIL * sum.abs() {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Sample count and timing of one run, as needed for rate metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub n_subspaces: usize,
    pub n_samples: usize,
    /// Wall-clock time of the slowest subspace task.
    pub max_wall_seconds: f64,
    /// CPU time summed over subspace tasks.
    pub total_cpu_seconds: f64,
}

/// Sampling rate of a partitioned run relative to an unpartitioned baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// `(N_k / max_k Δt_k) · (Δt_0 / N_0)`.
    pub sampling_rate: f64,
    /// `(N_k / Σ τ_i) · (τ_0 / N_0)`.
    pub per_chain_rate: f64,
    pub baseline: RunTiming,
    pub run: RunTiming,
}

/// Rate metrics. Exploration and tree construction are not part of either
/// timing, so they never enter the ratios.
pub fn rate_report(baseline: &RunTiming, run: &RunTiming) -> Result<RateReport> {
    if baseline.n_subspaces != 1 {
        return Err(Error::invalid("baseline run must use a single subspace"));
    }
    for (name, t) in [("baseline", baseline), ("run", run)] {
        if !(t.max_wall_seconds > 0.0) {
            return Err(Error::MissingTiming(format!("{name}: wall-clock time")));
        }
        if !(t.total_cpu_seconds > 0.0) {
            return Err(Error::MissingTiming(format!("{name}: CPU time")));
        }
        if t.n_samples == 0 {
            return Err(Error::MissingTiming(format!("{name}: no samples")));
        }
    }
    let n0 = baseline.n_samples as f64;
    let nk = run.n_samples as f64;
    Ok(RateReport {
        sampling_rate: nk / run.max_wall_seconds * baseline.max_wall_seconds / n0,
        per_chain_rate: nk / run.total_cpu_seconds * baseline.total_cpu_seconds / n0,
        baseline: *baseline,
        run: *run,
    })
}
