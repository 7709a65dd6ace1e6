//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the geometric engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Wedge product would exceed the top degree.
    #[error("degree exceeds 2n")]
    DegreeOverflow,
    /// A form expected to be Kähler is not positive-definite.
    #[error("omega not positive-definite")]
    NotPositive,
    /// Division by a vanishing top form.
    #[error("denominator top form is zero")]
    ZeroDenominator,
    /// A metric matrix could not be inverted.
    #[error("non-invertible metric matrix")]
    Singular,
    /// Total-space form ω_k fails positivity.
    #[error("k below positivity threshold (k = {0})")]
    KBelowThreshold(f64),
    /// Right-hand side of a Poisson problem has nonzero mean.
    #[error("rhs not orthogonal to constants (mean = {0:e})")]
    NonzeroMean(f64),
    /// Zero vector where a nonzero one is required.
    #[error("zero vector")]
    ZeroVector,
    /// Unsupported base, bundle or configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Bundle has no Hermitian–Einstein metric of the requested type.
    #[error("bundle not polystable; HE unattainable")]
    NotPolystable,
    /// Hermitian–Einstein precondition failed.
    #[error("Hermitian-Einstein condition violated (residual {0:e})")]
    NotHermitianEinstein(f64),
    /// Holomorphicity precondition failed.
    #[error("vector field not holomorphic (residual {0:e})")]
    NotHolomorphic(f64),
    /// A Hamiltonian lies outside the admissible space.
    #[error("function outside the Hamiltonian space (residual {0:e})")]
    OutsideHamiltonianSpace(f64),
    /// A linear solve hit a kernel component.
    #[error("solve hits kernel component: {0}")]
    KernelComponent(String),
    /// A linear system is too ill-conditioned.
    #[error("singular linear system (condition estimate {0:e})")]
    IllConditioned(f64),
    /// Iteration failed to converge.
    #[error("divergence after {iterations} iterations; residual history {history:?}")]
    Divergence {
        /// Iterations performed.
        iterations: usize,
        /// Residual sup-norms per iteration.
        history: Vec<f64>,
    },
    /// Invalid input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Result alias.
pub type Result<T> = std::result::Result<T, Error>;
