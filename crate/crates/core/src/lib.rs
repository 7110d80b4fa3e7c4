//! Zeroth-order doubly stochastic variance-reduced optimization.
//!
//! Objectives are finite sums `f(x) = (1/l) Σ_i f_i(x)` accessed only through
//! component values. Gradients are estimated by coordinate-wise central
//! differences, sampled over both a mini-batch of components and a block of
//! coordinates, and corrected against a per-epoch snapshot.

pub mod async_engine;
pub mod error;
pub mod objectives;
pub mod optimizers;
pub mod sampling;
pub mod theory;
pub mod trace;
pub mod zo_estimator;

pub use error::{Error, Result};
pub use objectives::{
    make_blackbox, make_least_squares_svm, make_logistic, make_ridge, BlackBox, Counting, Dataset, FiniteSum,
    GeneratorKind, GlmObjective, Loss,
};
pub use optimizers::{run_asyszo_sequential, run_dszovr, Algorithm, RunConfig, RunOutput, StepDecay};
pub use sampling::{Batch, CoordinateBlock, Sampler};
pub use trace::{Trace, TraceRecord};
pub use zo_estimator::SmoothingSchedule;
