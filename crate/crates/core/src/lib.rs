//! Low-rank matrix completion when entries are sampled with replacement.
//!
//! The crate covers the full pipeline: ground-truth generation, sampling and
//! noise models, the loss functions and the nuclear-norm/box proximal map,
//! three penalized estimators (least squares, Huber, square root), Monte Carlo
//! checks of the matrix concentration parameters that drive their tuning, and
//! a rate-scaling harness with CSV/JSON persistence.

// NaN must fail parameter checks, hence `!(x > 0.0)` style comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod concentration;
pub mod error;
pub mod experiments;
pub mod matrix;
pub mod prox;
pub mod rng;
pub mod sampling;
pub mod solvers;

pub use error::{Error, Result};
pub use matrix::{generate_low_rank, svd, DenseMatrix, Dims, GroundTruth};
pub use sampling::{
    sample_observations, NoiseModel, Observation, ObservationSet, SamplingDistribution,
};
pub use solvers::{fit, Estimator, EstimatorSpec, SolveResult, SolverConfig, Tuning};
