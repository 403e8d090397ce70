//! Integral of the target over one subspace, estimated from that subspace's
//! own MCMC samples.
//!
//! [`HarmonicRegion`] is a region-restricted harmonic-mean estimator. With
//! samples `λ_i ~ f/I` on a box `ω` and any region `R ⊆ ω`,
//! `E[1_R(λ)/f(λ)] = V(R)/I`, so
//!
//! ```text
//! Î = V(R) · N / Σ_{λ_i ∈ R} 1/f(λ_i)
//! ```
//!
//! Restricting the sum to a region where `f` varies little keeps the
//! estimator's variance finite. A region is grown from a centre outwards, in
//! order of Chebyshev distance scaled by the per-axis MAD, until the density
//! inside would vary by more than `max_density_ratio`; it never holds less
//! than `mass_fraction` of the samples. Each chain's densest sample is tried
//! as a centre and the largest region is kept. Faces that end within a few
//! expected sample spacings of the subspace boundary are moved onto it, so a
//! flat density yields the whole box and an exact answer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diagnostics::series_autocorr_time;
use crate::error::{Error, Result};
use crate::matrix::SampleMatrix;
use crate::sampler::SubspaceSamples;
use crate::target::ParameterBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralEstimate {
    pub value: f64,
    pub std_error: f64,
    /// `ln value`, kept separately because tiny subspace integrals underflow.
    pub log_value: f64,
    pub method: String,
    /// Samples inside the evaluation region.
    pub n_used: usize,
    pub n_total: usize,
    pub region: ParameterBox,
}

/// Pluggable subspace integrator.
pub trait Integrator: Send + Sync {
    fn name(&self) -> &'static str;

    fn integrate(&self, samples: &SubspaceSamples, bx: &ParameterBox) -> Result<IntegralEstimate>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonicRegion {
    pub min_samples: usize,
    /// Lower bound on the fraction of samples the region is built from.
    pub mass_fraction: f64,
    /// Upper bound on max/min density among the samples the region is built
    /// from, once above the mass floor.
    pub max_density_ratio: f64,
    pub min_region_samples: usize,
    /// Faces within `side · (snap_margin + ln n) / n` of the subspace
    /// boundary are snapped onto it.
    pub snap_margin: f64,
}

impl Default for HarmonicRegion {
    fn default() -> Self {
        Self {
            min_samples: 100,
            mass_fraction: 0.0,
            max_density_ratio: 1e3,
            min_region_samples: 10,
            snap_margin: 10.0,
        }
    }
}

pub const HARMONIC_REGION: &str = "harmonic-region";

/// Looks up an integrator by its CLI name.
pub fn integrator_by_name(name: &str) -> Result<Box<dyn Integrator>> {
    match name {
        HARMONIC_REGION => Ok(Box::new(HarmonicRegion::default())),
        other => Err(Error::invalid(format!("unknown integrator `{other}`"))),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl HarmonicRegion {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mass_fraction) {
            return Err(Error::invalid("mass_fraction must be in [0, 1]"));
        }
        if !(self.max_density_ratio >= 1.0) {
            return Err(Error::invalid("max_density_ratio must be at least 1"));
        }
        if !(self.snap_margin >= 0.0) {
            return Err(Error::invalid("snap_margin must be non-negative"));
        }
        Ok(())
    }

    /// Picks the evaluation region for the given samples.
    ///
    /// Candidate centres are the densest samples of each chain; the candidate
    /// whose density-bounded neighbourhood is largest wins, ties going to the
    /// earlier chain. A leaf that holds more than one mode thus gets a region
    /// inside the best-sampled one.
    pub fn region(
        &self,
        points: &SampleMatrix,
        log_f: &[f64],
        chains: &[Range<usize>],
        bx: &ParameterBox,
    ) -> Result<ParameterBox> {
        let n = points.len();
        let m = points.dim();
        let mut scale = Vec::with_capacity(m);
        for j in 0..m {
            let mut col = points.column(j);
            let med = median(&mut col);
            let range = col[n - 1] - col[0];
            let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
            let mad = 1.4826 * median(&mut dev);
            scale.push(if mad > 0.0 {
                mad
            } else if range > 0.0 {
                range
            } else {
                bx.side(j)
            });
        }
        let mut centres: Vec<Vec<f64>> = Vec::new();
        for r in chains.iter().filter(|r| !r.is_empty()) {
            let peak = r.clone().fold(r.start, |b, i| if log_f[i] > log_f[b] { i } else { b });
            let c = points.row(peak).to_vec();
            if !centres.contains(&c) {
                centres.push(c);
            }
        }
        let mut best: Option<(usize, ParameterBox)> = None;
        for centre in &centres {
            let Some((count, region)) = self.region_around(points, log_f, centre, &scale, bx) else {
                continue;
            };
            if best.as_ref().is_none_or(|(c, _)| count > *c) {
                best = Some((count, region));
            }
        }
        best.map(|(_, r)| r)
            .ok_or_else(|| Error::IntegrationFailure("samples collapse to a flat region".into()))
    }

    /// Bounding box of the samples nearest to `centre` (scaled Chebyshev
    /// distance) whose densities stay within the ratio bound, with faces
    /// close to the subspace boundary snapped onto it. Also returns how many
    /// samples the box was built from.
    fn region_around(
        &self,
        points: &SampleMatrix,
        log_f: &[f64],
        centre: &[f64],
        scale: &[f64],
        bx: &ParameterBox,
    ) -> Option<(usize, ParameterBox)> {
        let n = points.len();
        let m = points.dim();
        let dist: Vec<f64> = points
            .rows()
            .map(|r| {
                r.iter()
                    .zip(centre)
                    .zip(scale)
                    .map(|((x, c), s)| ((x - c) / s).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let mut order: Vec<usize> = (0..n).filter(|&i| log_f[i] > f64::NEG_INFINITY).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));

        let log_ratio = self.max_density_ratio.ln();
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut k_ratio = 0;
        for (k, &i) in order.iter().enumerate() {
            hi = hi.max(log_f[i]);
            lo = lo.min(log_f[i]);
            if hi - lo > log_ratio {
                break;
            }
            k_ratio = k + 1;
        }
        let k_mass = (self.mass_fraction * n as f64).ceil() as usize;
        let k = k_ratio.max(k_mass).max(self.min_region_samples).min(order.len());

        let mut lower = vec![f64::INFINITY; m];
        let mut upper = vec![f64::NEG_INFINITY; m];
        for &i in &order[..k] {
            for (j, v) in points.row(i).iter().enumerate() {
                lower[j] = lower[j].min(*v);
                upper[j] = upper[j].max(*v);
            }
        }
        let nk = k as f64;
        for j in 0..m {
            let tol = bx.side(j) * (self.snap_margin + nk.ln()) / nk;
            if lower[j] - bx.lower()[j] <= tol {
                lower[j] = bx.lower()[j];
            }
            if bx.upper()[j] - upper[j] <= tol {
                upper[j] = bx.upper()[j];
            }
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return None;
        }
        ParameterBox::new(lower, upper).ok().map(|b| (k, b))
    }

    /// Estimate from raw samples. `chains` gives the contiguous row range of
    /// each chain and is used for the autocorrelation-aware error.
    pub fn estimate(
        &self,
        points: &SampleMatrix,
        log_f: &[f64],
        chains: &[Range<usize>],
        bx: &ParameterBox,
    ) -> Result<IntegralEstimate> {
        self.validate()?;
        let n = points.len();
        if points.dim() != bx.dim() {
            return Err(Error::DimensionMismatch {
                expected: bx.dim(),
                got: points.dim(),
            });
        }
        if log_f.len() != n {
            return Err(Error::invalid("one log-density per sample required"));
        }
        if n < self.min_samples.max(1) {
            return Err(Error::IntegrationFailure(format!(
                "{n} samples, at least {} required",
                self.min_samples
            )));
        }
        if log_f.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::CorruptTarget);
        }
        if log_f.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::IntegrationFailure("density is zero at every sample".into()));
        }
        let region = self.region(points, log_f, chains, bx)?;
        let inside: Vec<bool> = points
            .rows()
            .zip(log_f)
            .map(|(r, l)| *l > f64::NEG_INFINITY && region.contains(r))
            .collect();
        let top = log_f
            .iter()
            .zip(&inside)
            .filter(|(_, i)| **i)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::IntegrationFailure("density is zero in the region".into()));
        }
        // g_i = f_max / f_i inside the region, 0 outside
        let g: Vec<f64> = log_f
            .iter()
            .zip(&inside)
            .map(|(l, i)| if *i { (top - l).exp() } else { 0.0 })
            .collect();
        let n_used = inside.iter().filter(|i| **i).count();
        let mean = g.iter().sum::<f64>() / n as f64;
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        let ess: f64 = chains
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| {
                let s = &g[r.clone()];
                s.len() as f64 / series_autocorr_time(s).unwrap_or(1.0)
            })
            .sum::<f64>()
            .max(1.0);
        let log_value = region.log_volume() + top - mean.ln();
        let value = log_value.exp();
        let rel = (var / ess).sqrt() / mean;
        Ok(IntegralEstimate {
            value,
            std_error: value * rel,
            log_value,
            method: HARMONIC_REGION.into(),
            n_used,
            n_total: n,
            region,
        })
    }
}

impl Integrator for HarmonicRegion {
    fn name(&self) -> &'static str {
        HARMONIC_REGION
    }

    fn integrate(&self, samples: &SubspaceSamples, bx: &ParameterBox) -> Result<IntegralEstimate> {
        self.estimate(&samples.samples, &samples.log_densities, &samples.chain_ranges(), bx)
    }
}

/// Integral of the subspace with the default integrator.
pub fn integrate_subspace(samples: &SubspaceSamples, bx: &ParameterBox) -> Result<IntegralEstimate> {
    HarmonicRegion::default().integrate(samples, bx)
}

/// Evidence summed over subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalIntegral {
    pub value: f64,
    pub std_error: f64,
    /// Subspaces without an estimate; they contribute nothing.
    pub failed: usize,
    pub degraded: bool,
}

/// Sum of subspace integrals, errors added in quadrature. `None` entries are
/// failed subspaces and mark the total as degraded.
pub fn total_integral(estimates: &[Option<IntegralEstimate>]) -> Result<TotalIntegral> {
    if estimates.is_empty() {
        return Err(Error::invalid("no subspace estimates"));
    }
    let ok = estimates.iter().flatten();
    let value = ok.clone().map(|e| e.value).sum();
    let std_error = ok.map(|e| e.std_error * e.std_error).sum::<f64>().sqrt();
    let failed = estimates.iter().filter(|e| e.is_none()).count();
    Ok(TotalIntegral {
        value,
        std_error,
        failed,
        degraded: failed > 0,
    })
}
