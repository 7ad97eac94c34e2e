//! Random selection: release model `I ∼ Cat(π)`.
//!
//! The RDP bound mixes per-model curves with a log-sum-exp, the PLD bound
//! takes convex combinations of per-model hockey-stick divergences, and the
//! feasibility sweep evaluates either bound on a simplex lattice.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AccountingError, Result};
use crate::numeric::log_sum_exp;
use crate::pld::{epsilon_for_delta, mechanism_pld, PldConfig, PldPair};
use crate::rdp::{check_delta, mechanism_rdp_curve, rdp_to_dp, RdpCurve};
use crate::types::{
    simplex_lattice, Accountant, DpGuarantee, FeasibleEntry, MechanismSpec, MergeWeights,
    OrderGrid,
};

/// A weight vector with its certified ε at the target δ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsCandidate {
    pub weights: MergeWeights,
    pub eps: f64,
    pub accountant: Accountant,
}

/// Settings shared by the feasibility sweeps.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Order grid; `None` picks a default for the models at hand.
    pub grid: Option<OrderGrid>,
    pub pld: PldConfig,
    /// Override of the linear-combination enumeration cap.
    pub enumeration_cap: Option<u128>,
}

fn check_weights(n: usize, pi: &MergeWeights) -> Result<()> {
    if pi.len() != n {
        return Err(AccountingError::DimensionMismatch {
            expected: n,
            found: pi.len(),
        });
    }
    Ok(())
}

/// `ε_α(π) ≤ (1/(α−1)) log Σ_i π_i e^{(α−1) ε_{α,i}}`, skipping `π_i = 0`.
pub fn rs_rdp_curve(curves: &[RdpCurve], pi: &MergeWeights) -> Result<RdpCurve> {
    let first = curves.first().ok_or(AccountingError::Empty("curves"))?;
    check_weights(curves.len(), pi)?;
    if curves.iter().any(|c| c.grid() != first.grid()) {
        return Err(AccountingError::GridMismatch);
    }
    let active: Vec<(f64, &RdpCurve)> = pi
        .as_slice()
        .iter()
        .zip(curves)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| (*w, c))
        .collect();
    let mut terms = Vec::with_capacity(active.len());
    let values = first
        .orders()
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            terms.clear();
            terms.extend(
                active
                    .iter()
                    .map(|(w, c)| w.ln() + (alpha - 1.0) * c.values()[k]),
            );
            // A single active model must come back unchanged.
            if let [(_, c)] = active.as_slice() {
                return c.values()[k];
            }
            (log_sum_exp(&terms) / (alpha - 1.0)).max(0.0)
        })
        .collect();
    RdpCurve::new(first.grid().clone(), values)
}

/// Certified ε of random selection at `delta` from RDP curves.
pub fn rs_dp_eps(curves: &[RdpCurve], pi: &MergeWeights, delta: f64) -> Result<f64> {
    Ok(rdp_to_dp(&rs_rdp_curve(curves, pi)?, delta)?.eps)
}

fn active_plds<'a>(plds: &'a [PldPair], pi: &MergeWeights) -> Result<Vec<(f64, &'a PldPair)>> {
    if plds.is_empty() {
        return Err(AccountingError::Empty("PLDs"));
    }
    check_weights(plds.len(), pi)?;
    Ok(pi
        .as_slice()
        .iter()
        .zip(plds)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, p)| (*w, p))
        .collect())
}

fn mixed_delta(active: &[(f64, &PldPair)], eps: f64) -> f64 {
    if let [(_, p)] = active {
        return crate::pld::pld_delta(p, eps);
    }
    let plus: f64 = active.iter().map(|(w, p)| w * p.delta_plus(eps)).sum();
    let minus: f64 = active.iter().map(|(w, p)| w * p.delta_minus(eps)).sum();
    plus.max(minus).clamp(0.0, 1.0)
}

/// `max{Σ π_i H_ε(P_i, Q_i), Σ π_i H_ε(Q_i, P_i)}`.
pub fn rs_pld_delta(plds: &[PldPair], pi: &MergeWeights, eps: f64) -> Result<f64> {
    Ok(mixed_delta(&active_plds(plds, pi)?, eps))
}

/// Smallest ε with `rs_pld_delta ≤ delta`.
pub fn rs_pld_epsilon(plds: &[PldPair], pi: &MergeWeights, delta: f64) -> Result<f64> {
    let active = active_plds(plds, pi)?;
    let infinite = active
        .iter()
        .map(|(w, p)| w * p.up.atom_pos_inf())
        .sum::<f64>()
        .max(active.iter().map(|(w, p)| w * p.down.atom_neg_inf()).sum());
    let saturation = active
        .iter()
        .map(|(_, p)| {
            let up = p.up.loss(p.up.len() - 1);
            let down = -p.down.origin();
            up.max(down).max(0.0) + p.spacing()
        })
        .fold(0.0, f64::max);
    epsilon_for_delta(|e| mixed_delta(&active, e), delta, infinite, saturation)
}

/// Mixed grid for all-Gaussian inputs, integer orders otherwise.
pub fn default_grid(models: &[MechanismSpec]) -> OrderGrid {
    if models
        .iter()
        .all(|m| matches!(m, MechanismSpec::Gaussian { .. }))
    {
        OrderGrid::default_mixed()
    } else {
        OrderGrid::default_integer()
    }
}

/// Lattice points whose random selection meets `target`, in lexicographic
/// order. RDP entries report the certified ε at the target δ; PLD entries
/// report the certified δ at the target ε.
pub fn rs_feasible_set(
    models: &[MechanismSpec],
    target: &DpGuarantee,
    resolution: f64,
    accountant: Accountant,
    options: &SweepOptions,
) -> Result<Vec<FeasibleEntry>> {
    if models.is_empty() {
        return Err(AccountingError::Empty("models"));
    }
    let lattice = simplex_lattice(models.len(), resolution)?;
    let results: Vec<Result<Option<FeasibleEntry>>> = match accountant {
        Accountant::Rdp => {
            check_delta(target.delta)?;
            let grid = options.grid.clone().unwrap_or_else(|| default_grid(models));
            let curves = models
                .iter()
                .map(|m| mechanism_rdp_curve(m, &grid))
                .collect::<Result<Vec<_>>>()?;
            lattice
                .into_par_iter()
                .map(|pi| {
                    let eps = match rs_dp_eps(&curves, &pi, target.delta) {
                        Ok(e) => e,
                        Err(AccountingError::AllInfinite) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                    Ok((eps <= target.eps).then_some(FeasibleEntry {
                        weights: pi,
                        eps,
                        delta: target.delta,
                    }))
                })
                .collect()
        }
        Accountant::Pld => {
            let plds = models
                .iter()
                .map(|m| mechanism_pld(m, &options.pld))
                .collect::<Result<Vec<_>>>()?;
            lattice
                .into_par_iter()
                .map(|pi| {
                    let delta = rs_pld_delta(&plds, &pi, target.eps)?;
                    Ok((delta <= target.delta).then_some(FeasibleEntry {
                        weights: pi,
                        eps: target.eps,
                        delta,
                    }))
                })
                .collect()
        }
    };
    let mut out = Vec::new();
    for r in results {
        if let Some(e) = r? {
            out.push(e);
        }
    }
    Ok(out)
}

/// Draws the released model index. Uses no data.
pub fn rs_sample(pi: &MergeWeights, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    selector(pi).sample(&mut rng)
}

/// `n` draws from one seeded stream.
pub fn rs_sample_many(pi: &MergeWeights, seed: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = selector(pi);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

fn selector(pi: &MergeWeights) -> WeightedIndex<f64> {
    WeightedIndex::new(pi.as_slice()).expect("validated weights have positive mass")
}

/// Writes feasible entries as a JSON array.
pub fn write_feasible_json<W: Write>(entries: &[FeasibleEntry], out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(out, entries)?;
    Ok(())
}
