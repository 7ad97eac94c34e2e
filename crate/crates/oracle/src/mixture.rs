use std::f64::consts::PI;

use crate::{OracleError, Result};

/// `Σ_k w_k N(μ_k, v_k)` on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture1D {
    components: Vec<(f64, f64, f64)>,
}

impl GaussianMixture1D {
    /// Components are `(weight, mean, variance)`. Zero-weight components are
    /// dropped.
    pub fn new(components: Vec<(f64, f64, f64)>) -> Result<Self> {
        for &(w, m, v) in &components {
            if !(w >= 0.0) || !m.is_finite() || !(v > 0.0 && v.is_finite()) {
                return Err(OracleError::InvalidMixture(format!(
                    "component ({w}, {m}, {v}) needs weight >= 0, finite mean, variance > 0"
                )));
            }
        }
        let components: Vec<_> = components.into_iter().filter(|c| c.0 > 0.0).collect();
        if components.is_empty() {
            return Err(OracleError::InvalidMixture("no component has positive weight".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OracleError::InvalidMixture(format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![(1.0, mean, variance)])
    }

    pub fn components(&self) -> &[(f64, f64, f64)] {
        &self.components
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|&(w, m, v)| w.ln() - 0.5 * (2.0 * PI * v).ln() - (x - m) * (x - m) / (2.0 * v))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Smallest interval holding every component's `mean ± k·sd`.
    pub fn window(&self, k: f64) -> (f64, f64) {
        self.components.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &(_, m, v)| (lo.min(m - k * v.sqrt()), hi.max(m + k * v.sqrt())),
        )
    }

    pub fn max_sd(&self) -> f64 {
        self.components.iter().map(|c| c.2.sqrt()).fold(0.0, f64::max)
    }
}
