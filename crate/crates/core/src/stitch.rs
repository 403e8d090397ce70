//! Reweighting and concatenation of the per-subspace sample sets.
//!
//! Each sample of subspace `k` gets the weight `I_k / N_k`. Weights are kept
//! unnormalized, so they sum to the evidence estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integration::{total_integral, IntegralEstimate, TotalIntegral};
use crate::matrix::SampleMatrix;
use crate::sampler::SubspaceSamples;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSampleSet {
    pub samples: SampleMatrix,
    pub weights: Vec<f64>,
    pub log_densities: Vec<f64>,
    pub subspace_ids: Vec<u32>,
    pub chain_ids: Vec<u32>,
    pub total: TotalIntegral,
    /// Subspaces left out because they had no samples or no integral.
    pub skipped: Vec<usize>,
}

impl WeightedSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weighted mean of every coordinate.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let total = self.weight_sum();
        let mut mean = vec![0.0; self.dim()];
        for (row, w) in self.samples.rows().zip(&self.weights) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += w * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        mean
    }

    /// Row ranges of each subspace's samples, in output order.
    pub fn subspace_ranges(&self) -> Vec<(u32, std::ops::Range<usize>)> {
        crate::sampler::contiguous_runs(&self.subspace_ids)
            .into_iter()
            .map(|r| (self.subspace_ids[r.start], r))
            .collect()
    }
}

/// Concatenates subspace sample sets in the given order, weighting subspace
/// `k` by `I_k / N_k`. Subspaces with no samples or a failed integral
/// (`None`) are skipped and the total is marked degraded.
pub fn stitch(parts: &[(&SubspaceSamples, Option<&IntegralEstimate>)]) -> Result<WeightedSampleSet> {
    let dim = parts.first().map(|(s, _)| s.samples.dim()).ok_or(Error::EmptyResult)?;
    let n: usize = parts.iter().filter(|(_, e)| e.is_some()).map(|(s, _)| s.len()).sum();
    let mut out = WeightedSampleSet {
        samples: SampleMatrix::with_capacity(dim, n),
        weights: Vec::with_capacity(n),
        log_densities: Vec::with_capacity(n),
        subspace_ids: Vec::with_capacity(n),
        chain_ids: Vec::with_capacity(n),
        total: TotalIntegral {
            value: 0.0,
            std_error: 0.0,
            failed: 0,
            degraded: false,
        },
        skipped: Vec::new(),
    };
    let mut estimates = Vec::with_capacity(parts.len());
    for (s, est) in parts {
        if s.samples.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.samples.dim(),
            });
        }
        match est {
            Some(e) if !s.is_empty() => {
                let w = e.value / s.len() as f64;
                out.samples.extend(&s.samples);
                out.weights.extend(std::iter::repeat_n(w, s.len()));
                out.log_densities.extend_from_slice(&s.log_densities);
                out.subspace_ids.extend(std::iter::repeat_n(s.index as u32, s.len()));
                out.chain_ids.extend_from_slice(&s.chain_ids);
                estimates.push(Some((*e).clone()));
            }
            _ => {
                out.skipped.push(s.index);
                estimates.push(None);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyResult);
    }
    out.total = total_integral(&estimates)?;
    Ok(out)
}

/// Systematic resampling: the points `(u + j) · W / n_out`, `j < n_out`, are
/// located in the cumulative weights. `u` is the single uniform offset in
/// `[0, 1)`. Returns one input index per output draw, in increasing order.
pub fn systematic_indices(weights: &[f64], n_out: usize, u: f64) -> Result<Vec<usize>> {
    if n_out == 0 {
        return Err(Error::invalid("n_out must be at least 1"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("total weight is zero"));
    }
    let stride = total / n_out as f64;
    let mut out = Vec::with_capacity(n_out);
    let mut i = 0;
    let mut cum = weights[0];
    for j in 0..n_out {
        let pos = (u + j as f64) * stride;
        while cum <= pos && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    Ok(out)
}

/// Unit-weight sample of size `n_out` drawn by systematic resampling.
pub fn resample_unit_weights<R: Rng + ?Sized>(
    ws: &WeightedSampleSet,
    n_out: usize,
    rng: &mut R,
) -> Result<SampleMatrix> {
    let u: f64 = rng.random();
    let idx = systematic_indices(&ws.weights, n_out, u)?;
    Ok(ws.samples.select(&idx))
}
