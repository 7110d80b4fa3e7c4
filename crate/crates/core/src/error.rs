use thiserror::Error;

use crate::trace::Trace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, dimensions or inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// A component evaluator failed.
    #[error("evaluation of component {component} failed: {message}")]
    Evaluation { component: usize, message: String },

    /// Iterate or objective left the finite range. Carries the trace recorded so far.
    #[error("diverged at global iteration {iteration}: {reason}")]
    Diverged {
        iteration: u64,
        reason: String,
        trace: Box<Trace>,
    },

    /// Analysis settings violate a precondition of the convergence bounds.
    #[error("infeasible settings: {0}")]
    Infeasible(String),

    /// An estimate was requested against a snapshot from another epoch.
    #[error("stale snapshot: estimate for epoch {requested} but snapshot is from epoch {snapshot}")]
    StaleSnapshot { requested: usize, snapshot: usize },

    /// Replay of an update log found an inconsistency.
    #[error("verification failed at t={t}: {message}")]
    Verification { t: u64, message: String },

    /// A worker thread panicked or aborted. Carries the trace recorded so far.
    #[error("worker failure: {message}")]
    Worker { message: String, trace: Box<Trace> },

    #[error("rate fit: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Partial trace attached to divergence and worker failures.
    pub fn partial_trace(&self) -> Option<&Trace> {
        match self {
            Error::Diverged { trace, .. } | Error::Worker { trace, .. } => Some(trace),
            _ => None,
        }
    }
}
