//! Parallel Markov chain Monte Carlo by space partitioning.
//!
//! The parameter space of a target density is cut into axis-aligned
//! hyperrectangles using a small set of exploration samples. Each subspace is
//! sampled independently with Metropolis-Hastings, its integral is estimated
//! from its own samples, and the per-subspace sample sets are reweighted by
//! `I_k / N_k` and stitched into one weighted sample set. The sum of the
//! subspace integrals is an estimate of the evidence of the target.
//!
//! The pipeline, in order:
//!
//! 1. [`exploration::explore`] runs many short chains over the full support.
//! 2. [`partition::build_tree`] greedily places cuts minimizing the
//!    within-cluster sum of squares of the exploration samples.
//! 3. [`sampler::sample_subspace`] tunes and runs multiple chains per leaf.
//! 4. [`integration::HarmonicRegion`] estimates each leaf integral.
//! 5. [`stitch::stitch`] assembles the weighted sample set.
//!
//! [`pipeline::run_pipeline`] drives all five steps on a bounded worker pool.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::single_range_in_vec_init))]

pub mod benchmark;
pub mod diagnostics;
pub mod error;
pub mod executor;
pub mod exploration;
pub mod integration;
pub mod io;
pub mod matrix;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod stitch;
pub mod target;
mod timing;

pub use error::{Error, Result};
pub use integration::{IntegralEstimate, Integrator};
pub use matrix::SampleMatrix;
pub use partition::{Cut, PartitionTree, Subspace};
pub use pipeline::{run_pipeline, RunPlan, RunResult};
pub use sampler::{SubspaceRunConfig, SubspaceSamples};
pub use stitch::WeightedSampleSet;
pub use target::{GaussianMixture, LogDensity, ParameterBox, Target};
