//! Simulation engine for active multiple matrix completion.
//!
//! A learner shares a sampling budget across `K` low-rank matrices, each
//! observed through noisy uniform entry queries. The [`strategy`] module
//! implements the MALocate allocation rule, which spends samples where the
//! honest upper bound on estimation error per sample is largest, alongside
//! uniform and oracle baselines. Error bounds come from double-sampled
//! entries ([`error_estimation`]) and estimates from SoftImpute
//! ([`estimation`]).

pub mod error;
pub mod error_estimation;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod strategy;

pub use error::{Error, Result};
pub use error_estimation::{ErrorEstimate, PairedSample, SplitMode};
pub use estimation::{Estimator, EstimatorConfig, MatrixEstimate, SoftImpute};
pub use linalg::Matrix;
pub use model::{Dataset, GroundTruth, MatrixSpec, NoiseModel, Observation};

pub use strategy::{LossSpec, PNorm, RunOutcome, RunTrace, Schedule, StrategyKind};
