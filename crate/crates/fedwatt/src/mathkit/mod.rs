//! Special functions and adaptive quadrature.
//!
//! Everything the analysis layer needs lives here: log-gamma, the incomplete
//! gamma family, the beta function, the modified Bessel function K0, and an
//! adaptive Gauss-Kronrod integrator that tolerates integrable endpoint
//! singularities and semi-infinite ranges. All routines are plain `f64` and
//! deterministic; accuracy statements are given per function and enforced by
//! the oracle tests at the bottom of each submodule.

mod bessel;
mod gamma;
mod quad;

pub use bessel::bessel_k0;
pub use gamma::{
    beta, ln_gamma, lower_incomplete_gamma, regularized_lower_gamma, upper_incomplete_gamma,
};
pub use quad::{integrate, QuadratureSpec};

use thiserror::Error;

/// Errors shared by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    /// An argument fell outside the mathematical domain of the function.
    #[error("{func}: argument {value} outside domain ({expected})")]
    Domain {
        func: &'static str,
        value: f64,
        expected: &'static str,
    },
    /// The adaptive integrator exhausted its subdivision budget before the
    /// requested tolerance was reached. The best estimate and its error bound
    /// are reported so callers can decide whether the result is usable.
    #[error("quadrature tolerance not met: estimate {estimate}, error bound {error_bound}")]
    ToleranceNotMet { estimate: f64, error_bound: f64 },
    /// An iterative expansion failed to converge within its iteration cap.
    #[error("{func}: no convergence after {iterations} iterations")]
    NoConvergence {
        func: &'static str,
        iterations: usize,
    },
}
