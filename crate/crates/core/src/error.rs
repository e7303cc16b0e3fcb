//! Crate-wide error type.

use nalgebra::DVector;
use thiserror::Error;

/// Errors reported by kernels, objectives, solvers, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation at construction time.
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: &'static str,
    },

    /// Two quantities that must share a dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A scalar argument lies outside the mathematical domain of the operation.
    #[error("domain error in {op}: argument {value} is {reason}")]
    Domain {
        op: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// A computation produced NaN or infinity where a finite value is required.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    /// An iterative inner solve exhausted its budget without meeting its tolerance.
    /// Carries the best iterate found so it can be inspected or reused.
    #[error(
        "inner subproblem failed: residual {residual:.3e} > tolerance {tolerance:.3e} \
         after {iters} iterations"
    )]
    SubproblemFailure {
        residual: f64,
        tolerance: f64,
        iters: usize,
        best: Box<DVector<f64>>,
    },

    /// A monitored sufficient-decrease inequality was violated while assertions
    /// were enabled; indicates an invalid step size or smoothness constant.
    #[error("sufficient decrease violated at iteration {iter}: slack {slack:.3e}")]
    DecreaseViolated { iter: usize, slack: f64 },

    /// An eigenvalue or Schur decomposition did not converge.
    #[error("dense eigendecomposition failed to converge ({context})")]
    EigenFailure { context: &'static str },

    /// File or parse problem while reading or writing instance containers.
    #[error("instance I/O error for {path}: {reason}")]
    InstanceIo { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
