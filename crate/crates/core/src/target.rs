//! Target densities and the built-in benchmark mixtures.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SampleMatrix;

/// Axis-aligned box `[lower, upper]` in `m` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for ParameterBox {
    type Error = Error;
    fn try_from(raw: RawBox) -> Result<Self> {
        ParameterBox::new(raw.lower, raw.upper)
    }
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("box dimension must be at least 1"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::invalid(format!(
                    "box axis {i}: need finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn min_side(&self) -> f64 {
        (0..self.dim()).map(|j| self.side(j)).fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        self.log_volume().exp()
    }

    pub fn log_volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.side(j).ln()).sum()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// True if `other` lies inside `self` (closed).
    pub fn contains_box(&self, other: &ParameterBox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|j| other.lower[j] >= self.lower[j] && other.upper[j] <= self.upper[j])
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }

    /// Splits at `position` along `axis` into (lower, upper) halves.
    pub(crate) fn split(&self, axis: usize, position: f64) -> (ParameterBox, ParameterBox) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[axis] = position;
        right.lower[axis] = position;
        (left, right)
    }
}

/// A log-density that can be evaluated concurrently.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Natural log of the (possibly unnormalized) density; `-inf` where the
    /// density is zero.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Exact i.i.d. draws, when the density supports it.
    fn sample_iid(&self, _n: usize, _rng: &mut dyn RngCore) -> Option<SampleMatrix> {
        None
    }

    /// Whether [`LogDensity::sample_iid`] returns samples.
    fn has_iid_oracle(&self) -> bool {
        false
    }
}

/// Weighted sum of individually normalized multivariate normals.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<DMatrix<f64>>,
    // lower Cholesky factors, row-major
    chol: Vec<Vec<f64>>,
    // ln a_i - m/2 ln(2 pi) - ln det(L_i)
    log_norm: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::invalid(format!(
                "mixture has {k} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be at least 1"));
        }
        let mut chol = Vec::with_capacity(k);
        let mut log_norm = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for i in 0..k {
            if !(weights[i] > 0.0 && weights[i].is_finite()) {
                return Err(Error::invalid(format!("component {i}: weight must be positive")));
            }
            if means[i].len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: means[i].len(),
                });
            }
            let c = &covariances[i];
            if c.len() != dim || c.iter().any(|r| r.len() != dim) {
                return Err(Error::invalid(format!("component {i}: covariance must be {dim}x{dim}")));
            }
            let m = DMatrix::from_fn(dim, dim, |r, s| c[r][s]);
            for r in 0..dim {
                for s in 0..r {
                    let (a, b) = (m[(r, s)], m[(s, r)]);
                    if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                        return Err(Error::invalid(format!("component {i}: covariance is not symmetric")));
                    }
                }
            }
            let l = m
                .clone()
                .cholesky()
                .ok_or_else(|| Error::invalid(format!("component {i}: covariance is not positive definite")))?
                .l();
            let log_det_l: f64 = (0..dim).map(|j| l[(j, j)].ln()).sum();
            log_norm.push(weights[i].ln() - 0.5 * dim as f64 * (2.0 * PI).ln() - log_det_l);
            chol.push((0..dim * dim).map(|idx| l[(idx / dim, idx % dim)]).collect());
            covs.push(m);
        }
        Ok(Self {
            dim,
            weights,
            means,
            covariances: covs,
            chol,
            log_norm,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariance(&self, component: usize) -> &DMatrix<f64> {
        &self.covariances[component]
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Integral over all of R^m: the sum of the component weights.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Log of one weighted component, `ln a_i + ln N(x | mu_i, Sigma_i)`.
    pub fn component_log_density(&self, i: usize, x: &[f64]) -> f64 {
        let m = self.dim;
        let l = &self.chol[i];
        let mu = &self.means[i];
        let mut buf = [0.0f64; 32];
        let mut heap;
        let z: &mut [f64] = if m <= buf.len() {
            &mut buf[..m]
        } else {
            heap = vec![0.0; m];
            &mut heap
        };
        let mut quad = 0.0;
        for r in 0..m {
            let row = &l[r * m..r * m + r];
            let acc: f64 = row.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            let zr = (x[r] - mu[r] - acc) / l[r * m + r];
            z[r] = zr;
            quad += zr * zr;
        }
        self.log_norm[i] - 0.5 * quad
    }

    /// Mean of the normalized mixture.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let total = self.total_weight();
        let mut mean = vec![0.0; self.dim];
        for (a, mu) in self.weights.iter().zip(&self.means) {
            for (m, v) in mean.iter_mut().zip(mu) {
                *m += a / total * v;
            }
        }
        mean
    }

    /// Covariance of the normalized mixture.
    pub fn mixture_covariance(&self) -> DMatrix<f64> {
        let total = self.total_weight();
        let mean = self.mixture_mean();
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.n_components() {
            let p = self.weights[i] / total;
            for r in 0..self.dim {
                for s in 0..self.dim {
                    out[(r, s)] += p * (self.covariances[i][(r, s)] + self.means[i][r] * self.means[i][s]);
                }
            }
        }
        for r in 0..self.dim {
            for s in 0..self.dim {
                out[(r, s)] -= mean[r] * mean[s];
            }
        }
        out
    }

    /// Draws `n` points: component by weight, then a Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SampleMatrix {
        let pick = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        let m = self.dim;
        let mut out = SampleMatrix::with_capacity(m, n);
        let mut z = vec![0.0; m];
        let mut x = vec![0.0; m];
        for _ in 0..n {
            let i = pick.sample(rng);
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let l = &self.chol[i];
            for r in 0..m {
                let row = &l[r * m..r * m + r + 1];
                x[r] = self.means[i][r] + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            }
            out.push(&x);
        }
        out
    }
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let k = self.n_components();
        if k == 1 {
            return self.component_log_density(0, x);
        }
        let mut terms = [0.0f64; 16];
        let mut heap;
        let t: &mut [f64] = if k <= terms.len() {
            &mut terms[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for (i, v) in t.iter_mut().enumerate() {
            *v = self.component_log_density(i, x);
        }
        log_sum_exp(t)
    }

    fn sample_iid(&self, n: usize, mut rng: &mut dyn RngCore) -> Option<SampleMatrix> {
        Some(self.sample(n, &mut rng))
    }

    fn has_iid_oracle(&self) -> bool {
        true
    }
}

/// `ln Σ exp(t_i)` without overflow or premature underflow.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln Σ a_i N(x | mu_i, Sigma_i)`, with a dimension check.
pub fn mixture_log_density(gm: &GaussianMixture, x: &[f64]) -> Result<f64> {
    if x.len() != gm.dim {
        return Err(Error::DimensionMismatch {
            expected: gm.dim,
            got: x.len(),
        });
    }
    Ok(gm.log_density(x))
}

/// `n` i.i.d. draws from the normalized mixture.
pub fn mixture_iid_sample<R: Rng + ?Sized>(gm: &GaussianMixture, n: usize, rng: &mut R) -> Result<SampleMatrix> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    Ok(gm.sample(n, rng))
}

/// Constant density `c` on its support.
#[derive(Debug, Clone)]
pub struct Uniform {
    dim: usize,
    log_c: f64,
}

impl Uniform {
    pub fn new(dim: usize, c: f64) -> Self {
        assert!(c > 0.0, "uniform density must be positive");
        Self { dim, log_c: c.ln() }
    }
}

impl LogDensity for Uniform {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, _x: &[f64]) -> f64 {
        self.log_c
    }
}

/// A density together with its box support and benchmark metadata.
#[derive(Clone)]
pub struct Target {
    pub name: String,
    pub support: ParameterBox,
    pub density: Arc<dyn LogDensity>,
    /// `∫_Ω f`, when known analytically.
    pub known_integral: Option<f64>,
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Target")
            .field("name", &self.name)
            .field("support", &self.support)
            .field("known_integral", &self.known_integral)
            .finish_non_exhaustive()
    }
}

impl Target {
    pub fn new(
        name: impl Into<String>,
        support: ParameterBox,
        density: Arc<dyn LogDensity>,
        known_integral: Option<f64>,
    ) -> Result<Self> {
        if density.dim() != support.dim() {
            return Err(Error::DimensionMismatch {
                expected: support.dim(),
                got: density.dim(),
            });
        }
        Ok(Self {
            name: name.into(),
            support,
            density,
            known_integral,
        })
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.density.log_density(x)
    }

    /// Exact draws restricted to the support, if the density has an oracle.
    pub fn sample_iid(&self, n: usize, rng: &mut dyn RngCore) -> Option<SampleMatrix> {
        let mut out = SampleMatrix::with_capacity(self.dim(), n);
        while out.len() < n {
            let batch = self.density.sample_iid(n - out.len(), rng)?;
            for row in batch.rows().filter(|r| self.support.contains(r)) {
                out.push(row);
            }
        }
        Some(out)
    }

    pub fn has_oracle(&self) -> bool {
        self.density.has_iid_oracle()
    }
}

/// Declarative description of a custom mixture target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub dim: usize,
    #[serde(rename = "box")]
    pub support: ParameterBox,
    pub mixture: MixtureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_integral: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl TargetSpec {
    pub fn build(&self) -> Result<Target> {
        if self.support.dim() != self.dim {
            return Err(Error::Schema(format!(
                "field `box`: dimension {} does not match `dim` {}",
                self.support.dim(),
                self.dim
            )));
        }
        let gm = GaussianMixture::new(
            self.mixture.weights.clone(),
            self.mixture.means.clone(),
            self.mixture.covariances.clone(),
        )?;
        if gm.dim != self.dim {
            return Err(Error::Schema(format!(
                "field `mixture.means`: dimension {} does not match `dim` {}",
                gm.dim, self.dim
            )));
        }
        Target::new(
            self.name.clone().unwrap_or_else(|| "custom".into()),
            self.support.clone(),
            Arc::new(gm),
            self.known_integral,
        )
    }
}

/// Where a run gets its target from: a built-in name or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSource {
    Named(String),
    Spec(TargetSpec),
}

impl TargetSource {
    pub fn resolve(&self) -> Result<Target> {
        match self {
            TargetSource::Named(name) => benchmark_target(name),
            TargetSource::Spec(spec) => spec.build(),
        }
    }
}

pub const MIX2D: &str = "mix2d";
pub const MIX9D: &str = "mix9d";

/// Two-dimensional mixture: heavy modes in the upper-right and lower-left
/// quadrants, light modes in the other two.
pub fn mix2d_mixture() -> GaussianMixture {
    let heavy = vec![vec![0.33, 0.17], vec![0.17, 0.33]];
    let light = vec![vec![0.019, -0.003], vec![-0.003, 0.017]];
    GaussianMixture::new(
        vec![0.48, 0.48, 0.02, 0.02],
        vec![vec![3.5, 3.5], vec![-3.5, -3.5], vec![-3.5, 3.5], vec![3.5, -3.5]],
        vec![heavy.clone(), heavy, light.clone(), light],
    )
    .expect("built-in mixture is valid")
}

/// Nine-dimensional mixture of four equal-weight normals with diagonal
/// covariances.
pub fn mix9d_mixture() -> GaussianMixture {
    let diag = |v: f64| -> Vec<Vec<f64>> {
        (0..9)
            .map(|r| (0..9).map(|s| if r == s { v } else { 0.0 }).collect())
            .collect()
    };
    GaussianMixture::new(
        vec![0.25; 4],
        vec![
            vec![4.6, 14.8, 12.7, 0.4, -7.3, 14.5, -14.0, -9.8, -12.3],
            vec![2.5, 2.9, 2.7, 8.7, -1.6, -11.0, -14.0, -7.5, -8.7],
            vec![-4.8, 0.68, -12.0, -5.0, 4.4, -0.45, 8.7, -4.5, 2.8],
            vec![-1.1, 4.8, 3.3, 13.0, -4.6, 0.99, -9.5, 14.0, 11.0],
        ],
        vec![diag(12.64), diag(10.48), diag(33.03), diag(27.45)],
    )
    .expect("built-in mixture is valid")
}

/// The benchmark catalog, keyed by name.
pub fn make_benchmark_targets() -> Vec<Target> {
    vec![
        Target::new(
            MIX2D,
            ParameterBox::cube(2, -10.0, 10.0).unwrap(),
            Arc::new(mix2d_mixture()),
            Some(1.0),
        )
        .unwrap(),
        Target::new(
            MIX9D,
            ParameterBox::cube(9, -50.0, 50.0).unwrap(),
            Arc::new(mix9d_mixture()),
            Some(1.0),
        )
        .unwrap(),
    ]
}

pub fn benchmark_target(name: &str) -> Result<Target> {
    make_benchmark_targets()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::UnknownTarget(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;

    fn naive_density(gm: &GaussianMixture, x: &[f64]) -> f64 {
        // direct pdf sum using explicit inverse and determinant
        let m = gm.dim;
        let mut total = 0.0;
        for i in 0..gm.n_components() {
            let cov = gm.covariance(i);
            let inv = cov.clone().try_inverse().unwrap();
            let det = cov.determinant();
            let d: Vec<f64> = (0..m).map(|j| x[j] - gm.means()[i][j]).collect();
            let mut q = 0.0;
            for r in 0..m {
                for s in 0..m {
                    q += d[r] * inv[(r, s)] * d[s];
                }
            }
            total += gm.weights()[i] * (-0.5 * q).exp() / ((2.0 * PI).powf(m as f64 / 2.0) * det.sqrt());
        }
        total
    }

    #[test]
    fn standard_normal_mode() {
        for m in [1usize, 2, 5] {
            let eye: Vec<Vec<f64>> = (0..m).map(|r| (0..m).map(|s| f64::from(r == s)).collect()).collect();
            let gm = GaussianMixture::new(vec![1.0], vec![vec![0.0; m]], vec![eye]).unwrap();
            let v = mixture_log_density(&gm, &vec![0.0; m]).unwrap();
            assert!((v + 0.5 * m as f64 * (2.0 * PI).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn mix9d_matches_naive_sum_at_each_mean() {
        let gm = mix9d_mixture();
        for mu in gm.means() {
            let fast = mixture_log_density(&gm, mu).unwrap();
            let naive = naive_density(&gm, mu);
            assert!(naive > 0.0);
            assert!(((fast.exp() - naive) / naive).abs() < 1e-10, "{fast} vs {}", naive.ln());
        }
    }

    #[test]
    fn mix2d_has_four_local_maxima_near_means() {
        let gm = mix2d_mixture();
        for mu in gm.means() {
            let centre = gm.log_density(mu);
            for (dx, dy) in [(0.3, 0.0), (-0.3, 0.0), (0.0, 0.3), (0.0, -0.3)] {
                assert!(gm.log_density(&[mu[0] + dx, mu[1] + dy]) < centre);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let gm = mix2d_mixture();
        assert!(matches!(
            mixture_log_density(&gm, &[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        let not_sym = vec![vec![1.0, 0.5], vec![0.0, 1.0]];
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![not_sym]).is_err());
        let not_pd = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![not_pd]).is_err());
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(GaussianMixture::new(vec![-1.0], vec![vec![0.0, 0.0]], vec![eye]).is_err());
    }

    #[test]
    fn catalog_contents() {
        let t2 = benchmark_target(MIX2D).unwrap();
        let t9 = benchmark_target(MIX9D).unwrap();
        assert_eq!(t2.known_integral, Some(1.0));
        assert_eq!(t9.known_integral, Some(1.0));
        assert!(t2.has_oracle() && t9.has_oracle());
        let g2 = mix2d_mixture();
        assert_eq!(g2.covariance(0)[(0, 1)], 0.17);
        assert_eq!(g2.covariance(0)[(0, 0)], 0.33);
        let g9 = mix9d_mixture();
        assert_eq!(g9.covariance(2)[(4, 4)], 33.03);
        assert_eq!(g9.covariance(2)[(4, 5)], 0.0);
        assert!(matches!(benchmark_target("nope"), Err(Error::UnknownTarget(_))));
    }

    #[test]
    fn equal_weight_component_frequencies() {
        let gm = mix9d_mixture();
        let n = 100_000usize;
        let mut rng = chain_rng(3);
        let s = gm.sample(n, &mut rng);
        // classify by nearest mean; modes are separated by many sigma
        let mut counts = [0usize; 4];
        for row in s.rows() {
            let best = (0..4)
                .max_by(|&a, &b| {
                    gm.component_log_density(a, row)
                        .partial_cmp(&gm.component_log_density(b, row))
                        .unwrap()
                })
                .unwrap();
            counts[best] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 25_000.0).abs() < 4.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn light_quadrant_fraction() {
        let gm = mix2d_mixture();
        let n = 100_000usize;
        let s = gm.sample(n, &mut chain_rng(5));
        let hits = s.rows().filter(|r| r[0] < 0.0 && r[1] > 0.0).count();
        let sigma = (n as f64 * 0.02 * 0.98).sqrt();
        assert!((hits as f64 - 0.02 * n as f64).abs() < 4.0 * sigma, "{hits}");
    }

    #[test]
    fn single_component_repeat_mean() {
        let cov = vec![vec![2.0, 0.3], vec![0.3, 0.5]];
        let mu = vec![1.5, -2.0];
        let gm = GaussianMixture::new(vec![1.0], vec![mu.clone()], vec![cov.clone()]).unwrap();
        let mut rng = chain_rng(8);
        let reps = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..reps {
            let s = mixture_iid_sample(&gm, 1, &mut rng).unwrap();
            assert_eq!(s.len(), 1);
            sum[0] += s.row(0)[0];
            sum[1] += s.row(0)[1];
        }
        for j in 0..2 {
            let se = (cov[j][j] / reps as f64).sqrt();
            assert!((sum[j] / reps as f64 - mu[j]).abs() < 4.0 * se);
        }
        assert!(mixture_iid_sample(&gm, 0, &mut rng).is_err());
    }

    #[test]
    fn iid_moments_match_mixture_moments() {
        for gm in [mix2d_mixture(), mix9d_mixture()] {
            let n = 100_000usize;
            let s = gm.sample(n, &mut chain_rng(17));
            let mean = gm.mixture_mean();
            let cov = gm.mixture_covariance();
            let m = gm.dim;
            let emp_mean: Vec<f64> = (0..m).map(|j| s.column(j).iter().sum::<f64>() / n as f64).collect();
            for j in 0..m {
                let se = (cov[(j, j)] / n as f64).sqrt();
                assert!((emp_mean[j] - mean[j]).abs() < 5.0 * se, "mean axis {j}");
                // variance of the sample variance: E[(x-mu)^4] - var^2, estimated empirically
                let d: Vec<f64> = s.column(j).iter().map(|x| x - mean[j]).collect();
                let var: f64 = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
                let m4: f64 = d.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
                let se_var = ((m4 - var * var) / n as f64).sqrt();
                assert!((var - cov[(j, j)]).abs() < 5.0 * se_var, "var axis {j}");
            }
        }
    }

    fn uniform_mc(t: &Target, bx: &ParameterBox, n: usize, seed: u64) -> (f64, f64) {
        use rand::Rng;
        let mut rng = chain_rng(seed);
        let vol = bx.volume();
        let (mut sum, mut sum2) = (0.0, 0.0);
        let mut x = vec![0.0; t.dim()];
        for _ in 0..n {
            for (j, v) in x.iter_mut().enumerate() {
                *v = bx.lower()[j] + bx.side(j) * rng.random::<f64>();
            }
            let f = t.log_density(&x).exp() * vol;
            sum += f;
            sum2 += f * f;
        }
        let mean = sum / n as f64;
        (mean, ((sum2 / n as f64 - mean * mean) / n as f64).sqrt())
    }

    #[test]
    fn monte_carlo_integral_mix2d() {
        let t = benchmark_target(MIX2D).unwrap();
        let (mean, se) = uniform_mc(&t, &ParameterBox::cube(2, -6.0, 6.0).unwrap(), 1_000_000, 99);
        assert!((mean - 1.0).abs() < 5.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn monte_carlo_integral_mix9d() {
        // A single uniform box is hopeless in 9D, so the integral is taken
        // over the +-4 sigma cube of each component. The cubes overlap other
        // components, so the oracle is the exact mixture mass of each cube,
        // a product of normal CDF differences per component.
        let t = benchmark_target(MIX9D).unwrap();
        let gm = mix9d_mixture();
        let phi = |z: f64| 0.5 * (1.0 + statrs::function::erf::erf(z / 2f64.sqrt()));
        let cube_mass = |bx: &ParameterBox| -> f64 {
            (0..gm.n_components())
                .map(|j| {
                    let s = gm.covariance(j)[(0, 0)].sqrt();
                    gm.weights()[j]
                        * (0..9)
                            .map(|d| {
                                let mu = gm.means()[j][d];
                                phi((bx.upper()[d] - mu) / s) - phi((bx.lower()[d] - mu) / s)
                            })
                            .product::<f64>()
                })
                .sum()
        };
        for i in 0..4 {
            let s = gm.covariance(i)[(0, 0)].sqrt();
            let mu = &gm.means()[i];
            let bx = ParameterBox::new(
                mu.iter().map(|m| m - 4.0 * s).collect(),
                mu.iter().map(|m| m + 4.0 * s).collect(),
            )
            .unwrap();
            let (mean, se) = uniform_mc(&t, &bx, 250_000, 100 + i as u64);
            let expected = cube_mass(&bx);
            assert!(
                (mean - expected).abs() < 5.0 * se,
                "cube {i}: {mean} ± {se} vs {expected}"
            );
        }
    }

    #[test]
    fn target_spec_round_trip_and_validation() {
        let json = r#"{"dim":2,"box":{"lower":[-5,-5],"upper":[5,5]},
            "mixture":{"weights":[1.0],"means":[[0,0]],"covariances":[[[1,0],[0,1]]]}}"#;
        let spec: TargetSpec = serde_json::from_str(json).unwrap();
        let t = spec.build().unwrap();
        assert_eq!(t.dim(), 2);
        let bad = r#"{"dim":2,"box":{"lower":[5,-5],"upper":[-5,5]},
            "mixture":{"weights":[1.0],"means":[[0,0]],"covariances":[[[1,0],[0,1]]]}}"#;
        assert!(serde_json::from_str::<TargetSpec>(bad).is_err());
        let src: TargetSource = serde_json::from_str("\"mix2d\"").unwrap();
        assert_eq!(src.resolve().unwrap().name, "mix2d");
    }
}
