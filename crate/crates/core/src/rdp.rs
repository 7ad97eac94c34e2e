//! Rényi DP curves: Gaussian and Poisson-subsampled Gaussian mechanisms,
//! additive composition and conversion to (ε, δ).

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{AccountingError, Result};
use crate::numeric::{ln_binomial, ln_or_neg_inf, log_sum_exp};
use crate::types::{DpSgdSpec, MechanismSpec, OrderGrid};

/// `α ↦ ε_α` on an order grid. Values may be `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdpCurve {
    grid: OrderGrid,
    values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(grid: OrderGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(AccountingError::GridMismatch);
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(AccountingError::InvalidParameter(
                "RDP values must be nonnegative".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn zero(grid: OrderGrid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn infinite(grid: OrderGrid) -> Self {
        let values = vec![f64::INFINITY; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &OrderGrid {
        &self.grid
    }

    pub fn orders(&self) -> &[f64] {
        self.grid.orders()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.orders().iter().copied().zip(self.values.iter().copied())
    }
}

/// Result of an RDP-to-DP conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Conversion {
    pub eps: f64,
    /// The order attaining the minimum.
    pub order: f64,
}

/// `ε_α = α Δ² / (2σ²)`.
pub fn gaussian_rdp(sensitivity: f64, noise: f64, alpha: f64) -> f64 {
    alpha * sensitivity * sensitivity / (2.0 * noise * noise)
}

pub fn gaussian_rdp_curve(sensitivity: f64, noise: f64, grid: &OrderGrid) -> RdpCurve {
    let values = grid
        .orders()
        .iter()
        .map(|&a| gaussian_rdp(sensitivity, noise, a))
        .collect();
    RdpCurve {
        grid: grid.clone(),
        values,
    }
}

/// Log-terms `ln[C(α,k)(1−q)^{α−k} q^k e^{k(k−1)/(2σ²)}]`, `k = 0..=α`.
fn subsampled_terms(q: f64, sigma: f64, alpha: u32) -> Vec<f64> {
    let ln_q = ln_or_neg_inf(q);
    let ln_1mq = ln_or_neg_inf(1.0 - q);
    let a = alpha as u64;
    (0..=a)
        .map(|k| {
            let kf = k as f64;
            let rest = (a - k) as f64;
            let from_q = if k == 0 { 0.0 } else { kf * ln_q };
            let from_1mq = if k == a { 0.0 } else { rest * ln_1mq };
            ln_binomial(a, k) + from_1mq + from_q + kf * (kf - 1.0) / (2.0 * sigma * sigma)
        })
        .collect()
}

/// RDP of one Poisson-subsampled Gaussian step at integer order `α ≥ 2`:
/// `(1/(α−1)) log Σ_k C(α,k)(1−q)^{α−k} q^k e^{k(k−1)/(2σ²)}`.
pub fn subsampled_gaussian_rdp(q: f64, sigma: f64, alpha: u32) -> f64 {
    debug_assert!(alpha >= 2);
    if q == 0.0 {
        return 0.0;
    }
    let value = log_sum_exp(&subsampled_terms(q, sigma, alpha)) / (alpha as f64 - 1.0);
    value.max(0.0)
}

pub fn subsampled_gaussian_rdp_curve(q: f64, sigma: f64, grid: &OrderGrid) -> Result<RdpCurve> {
    check_rate_and_noise(q, sigma)?;
    let orders = grid.integer_orders()?;
    let values = orders
        .iter()
        .map(|&a| subsampled_gaussian_rdp(q, sigma, a))
        .collect();
    Ok(RdpCurve {
        grid: grid.clone(),
        values,
    })
}

fn check_rate_and_noise(q: f64, sigma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(AccountingError::InvalidParameter(format!(
            "sampling rate {q} is outside [0, 1]"
        )));
    }
    if !(sigma > 0.0) {
        return Err(AccountingError::InvalidParameter(format!(
            "noise multiplier {sigma} must be positive"
        )));
    }
    Ok(())
}

/// RDP of a full DP-SGD run: per-step subsampled-Gaussian bounds summed over
/// steps. Steps with the same `(q, σ)` are evaluated once; the sum still runs
/// step by step so the result does not depend on the cache.
pub fn dp_sgd_rdp_curve(spec: &DpSgdSpec, grid: &OrderGrid) -> Result<RdpCurve> {
    let orders = grid.integer_orders()?;
    let mut cache: HashMap<(u64, u64), Vec<f64>> = HashMap::new();
    let mut values = vec![0.0; orders.len()];
    for t in 0..spec.steps() {
        let (q, _, sigma, _) = spec.step(t);
        let step = cache
            .entry((q.to_bits(), sigma.to_bits()))
            .or_insert_with(|| {
                orders
                    .iter()
                    .map(|&a| subsampled_gaussian_rdp(q, sigma, a))
                    .collect()
            });
        for (v, s) in values.iter_mut().zip(step.iter()) {
            *v += s;
        }
    }
    Ok(RdpCurve {
        grid: grid.clone(),
        values,
    })
}

/// The RDP curve of any supported mechanism.
pub fn mechanism_rdp_curve(spec: &MechanismSpec, grid: &OrderGrid) -> Result<RdpCurve> {
    match spec {
        MechanismSpec::Gaussian { sensitivity, noise } => {
            Ok(gaussian_rdp_curve(*sensitivity, *noise, grid))
        }
        MechanismSpec::DpSgd(s) => dp_sgd_rdp_curve(s, grid),
    }
}

/// Pointwise sum of curves on a common grid.
pub fn compose_rdp(curves: &[RdpCurve]) -> Result<RdpCurve> {
    let first = curves.first().ok_or(AccountingError::Empty("curves"))?;
    let mut values = vec![0.0; first.values.len()];
    for c in curves {
        if c.grid != first.grid {
            return Err(AccountingError::GridMismatch);
        }
        for (v, x) in values.iter_mut().zip(&c.values) {
            *v += x;
        }
    }
    Ok(RdpCurve {
        grid: first.grid.clone(),
        values,
    })
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountingError::InvalidParameter(format!(
            "delta must be in (0, 1) (got {delta})"
        )));
    }
    Ok(())
}

/// `ε = min_α { ε_α + log(1/δ)/(α−1) }` over the grid.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<Conversion> {
    check_delta(delta)?;
    let log_inv_delta = -delta.ln();
    let mut best: Option<Conversion> = None;
    for (alpha, value) in curve.iter() {
        if !value.is_finite() {
            continue;
        }
        let eps = value + log_inv_delta / (alpha - 1.0);
        if best.is_none_or(|b| eps < b.eps) {
            best = Some(Conversion { eps, order: alpha });
        }
    }
    best.ok_or(AccountingError::AllInfinite)
}
