//! Independent numerical oracles for checking privacy accounting bounds.
//!
//! Nothing here depends on the accountants: divergences are computed by
//! adaptive quadrature or Monte-Carlo directly from the densities.

mod mc;
mod mixture;
mod quadrature;

pub use mc::{hockey_stick_mc, Estimate, McResult, ToyLcInstance};
pub use mixture::GaussianMixture1D;
pub use quadrature::{hockey_stick_quadrature, integrate, renyi_quadrature};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid toy instance: {0}")]
    InvalidInstance(String),

    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureFailure { estimate: f64, tolerance: f64 },

    #[error("the divergence integral does not converge")]
    Divergent,
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `H_ε` between `N(Δ, σ²)` and `N(0, σ²)` with `r = Δ/σ`:
/// `Φ(r/2 − ε/r) − e^ε Φ(−r/2 − ε/r)`.
pub fn analytic_gaussian_delta(r: f64, eps: f64) -> f64 {
    if r <= 0.0 {
        return if eps >= 0.0 { 0.0 } else { 1.0 - eps.exp() };
    }
    let d = normal_cdf(r / 2.0 - eps / r) - eps.exp() * normal_cdf(-r / 2.0 - eps / r);
    d.clamp(0.0, 1.0)
}
