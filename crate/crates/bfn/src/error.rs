//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The implicit-midpoint system matrix `I - dt/2 * A` is singular,
    /// i.e. `2/dt` is an eigenvalue of `A`: the step is too large for the
    /// spectrum.
    #[error("integrator step failure: I - dt/2*A is singular (dt too large relative to the spectrum of {context})")]
    StepFailure { context: String },

    /// A normal matrix or Gauss-Newton information matrix `U(T)` lost rank;
    /// the parameter (or initial state) is not identifiable from the data.
    #[error("non-identifiable problem: {context} is singular")]
    NonIdentifiable { context: String },

    /// State norm blew past the instability guard during a bilinear sweep.
    #[error(
        "estimation diverged: state norm {norm:.3e} exceeded {limit:.3e} at node {node}; \
         consider warmup BFN sweeps or a smaller step size"
    )]
    Instability { norm: f64, limit: f64, node: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// A matrix handed in as a Gram matrix is not symmetric positive definite.
    #[error("invalid Gram matrix: {context}")]
    InvalidGram { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }
}
