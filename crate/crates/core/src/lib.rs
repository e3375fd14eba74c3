//! Ensemble training with explicit diversity control, built on a
//! Hessian-weighted bias-variance decomposition for twice-differentiable
//! losses.
//!
//! The crate is organized around six pieces:
//!
//! - [`losses`]: closed-form losses with exact gradients, Hessians and
//!   third-derivative bounds.
//! - [`network`]: a small dense network with manual backpropagation, optional
//!   sign binarization (straight-through estimator) and seeded optimizers.
//! - [`decomposition`]: the empirical identity
//!   `ensemble loss = average member loss - diversity + remainder`, plus the
//!   analytic remainder bound.
//! - [`training`]: the ensemble trainers (the lambda-blended objective, the
//!   explicit diversity-regularized objective, bagging, wagging, multiple
//!   choice learning, snapshots and greedy gradient boosting).
//! - [`data`]: deterministic synthetic datasets plus IDX/CSV ingestion.
//! - [`harness`]: experiment configs, method-by-lambda sweeps and the CSV and
//!   JSON outputs consumed by the CLI.
//!
//! Everything stochastic draws from pre-assigned streams (see [`rng`]), so a
//! fixed seed yields bit-identical results at any parallelism level.

pub mod bound;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod harness;
pub mod losses;
pub mod network;
pub mod rng;
pub mod training;

pub use bound::Bound;
pub use data::Dataset;
pub use decomposition::{DecompositionReport, SampleDecomposition};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, MetricsRow};
pub use losses::{LossEval, LossKind, LossTag, RemainderSpec};
pub use network::{
    Activation, DenseNet, GradCheckReport, LrSchedule, OptimizerConfig, OptimizerKind,
    OptimizerState, ParamGrads,
};
pub use training::{Ensemble, MethodSpec, TrainConfig};
