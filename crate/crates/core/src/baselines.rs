//! Reference accountants the merged certificates are compared against:
//! releasing every model jointly, and (ε, δ) advanced composition of
//! repeated Gaussian releases.

use serde::Serialize;

use crate::error::{AccountingError, Result};
use crate::pld::{convolve, PldPair};
use crate::rdp::{compose_rdp, RdpCurve};

/// RDP of releasing all models: the pointwise sum of their curves.
pub fn joint_rdp_bound(curves: &[RdpCurve]) -> Result<RdpCurve> {
    compose_rdp(curves)
}

/// PLD of releasing all models: the convolution of their PLDs.
pub fn joint_pld_bound(plds: &[PldPair]) -> Result<PldPair> {
    let (first, rest) = plds.split_first().ok_or(AccountingError::Empty("PLDs"))?;
    rest.iter().try_fold(first.clone(), |acc, p| convolve(&acc, p))
}

/// Result of advanced composition of `n` `(eps, delta)` releases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvancedComposition {
    pub eps_com: f64,
    pub delta_prime: f64,
}

fn check_inputs(delta: f64, n: u32, delta0: f64) -> Result<()> {
    if delta >= 0.5 {
        return Err(AccountingError::DeltaTooLarge(delta));
    }
    if !(delta > 0.0) {
        return Err(AccountingError::InvalidParameter(format!(
            "delta must be positive (got {delta})"
        )));
    }
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(AccountingError::InvalidParameter(format!(
            "delta0 must be in (0, 1) (got {delta0})"
        )));
    }
    if n == 0 {
        return Err(AccountingError::InvalidParameter(
            "at least one release is required".into(),
        ));
    }
    Ok(())
}

/// `ε_com = ε √(2N log(1/δ₀)) + N ε (e^ε − 1)`, `δ′ = Nδ + δ₀`.
pub fn advanced_composition(eps: f64, delta: f64, n: u32, delta0: f64) -> Result<AdvancedComposition> {
    check_inputs(delta, n, delta0)?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(AccountingError::InvalidParameter(format!(
            "eps must be finite and nonnegative (got {eps})"
        )));
    }
    let nf = n as f64;
    Ok(AdvancedComposition {
        eps_com: eps * (2.0 * nf * (1.0 / delta0).ln()).sqrt() + nf * eps * eps.exp_m1(),
        delta_prime: nf * delta + delta0,
    })
}

/// Per-release ε of a Gaussian mechanism with `t = Δ/σ`, from the continuous
/// RDP conversion: `t²/2 + t √(2 log(1/δ))`.
pub fn gaussian_release_eps(t: f64, delta: f64) -> f64 {
    0.5 * t * t + t * (2.0 * (1.0 / delta).ln()).sqrt()
}

/// Joint RDP ε of `n` Gaussian releases at `δ′`:
/// `N t²/2 + t √(2N log(1/δ′))`. A `δ′ ≥ 1` guarantee is vacuous and
/// reported as 0.
pub fn joint_gaussian_eps(t: f64, n: u32, delta_prime: f64) -> f64 {
    if delta_prime >= 1.0 {
        return 0.0;
    }
    let nf = n as f64;
    0.5 * nf * t * t + t * (2.0 * nf * (1.0 / delta_prime).ln()).sqrt()
}

/// Both sides of the comparison between joint RDP accounting and advanced
/// composition for `n` Gaussian releases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositionReport {
    pub n: u32,
    pub t: f64,
    pub delta: f64,
    pub delta0: f64,
    pub eps_single: f64,
    pub eps_com: f64,
    pub eps_rdp: f64,
    pub delta_prime: f64,
    pub holds: bool,
}

pub fn compare_prop10(t: f64, delta: f64, n: u32, delta0: f64) -> Result<CompositionReport> {
    check_inputs(delta, n, delta0)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(AccountingError::InvalidParameter(format!(
            "sensitivity-to-noise ratio must be finite and nonnegative (got {t})"
        )));
    }
    let eps_single = gaussian_release_eps(t, delta);
    let composed = advanced_composition(eps_single, delta, n, delta0)?;
    let eps_rdp = joint_gaussian_eps(t, n, composed.delta_prime);
    Ok(CompositionReport {
        n,
        t,
        delta,
        delta0,
        eps_single,
        eps_com: composed.eps_com,
        eps_rdp,
        delta_prime: composed.delta_prime,
        holds: eps_rdp <= composed.eps_com,
    })
}
