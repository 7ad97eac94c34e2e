use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::{OracleError, Result};

pub const MAX_DIMENSION: usize = 4;
const CHUNK: usize = 1 << 16;

/// One merged DP-SGD step in a small dimension: `P = Σ_J ρ_J N(v_J, s² I)`
/// against `Q = N(0, s² I)`, with `‖v_J‖ ≤ Δ_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLcInstance {
    dim: usize,
    rho: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    bounds: Vec<f64>,
    scale: f64,
}

impl ToyLcInstance {
    pub fn new(rho: Vec<f64>, shifts: Vec<Vec<f64>>, bounds: Vec<f64>, scale: f64) -> Result<Self> {
        let bad = |m: String| Err(OracleError::InvalidInstance(m));
        if rho.is_empty() || rho.len() != shifts.len() || rho.len() != bounds.len() {
            return bad("rho, shifts and bounds need equal nonzero lengths".into());
        }
        let dim = shifts[0].len();
        if dim == 0 || dim > MAX_DIMENSION {
            return bad(format!("dimension {dim} is outside 1..={MAX_DIMENSION}"));
        }
        if shifts.iter().any(|v| v.len() != dim) {
            return bad("shift vectors differ in dimension".into());
        }
        if rho.iter().any(|r| !(*r >= 0.0)) || (rho.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("rho must be a probability vector".into());
        }
        for (j, (v, b)) in shifts.iter().zip(&bounds).enumerate() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > b * (1.0 + 1e-12) + 1e-15 {
                return bad(format!("shift {j} has norm {norm} above its bound {b}"));
            }
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return bad(format!("scale {scale} must be positive"));
        }
        Ok(Self {
            dim,
            rho,
            shifts,
            bounds,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn shifts(&self) -> &[Vec<f64>] {
        &self.shifts
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `log dP/dQ` at `y`.
    pub fn loss(&self, y: &[f64]) -> f64 {
        let s2 = self.scale * self.scale;
        let mut max = f64::NEG_INFINITY;
        let mut terms = [f64::NEG_INFINITY; 64];
        for (j, (r, v)) in self.rho.iter().zip(&self.shifts).enumerate() {
            if *r == 0.0 {
                continue;
            }
            let dot: f64 = v.iter().zip(y).map(|(a, b)| a * b).sum();
            let sq: f64 = v.iter().map(|a| a * a).sum();
            let t = r.ln() + dot / s2 - sq / (2.0 * s2);
            terms[j] = t;
            max = max.max(t);
        }
        max + terms[..self.rho.len()]
            .iter()
            .map(|t| (t - max).exp())
            .sum::<f64>()
            .ln()
    }
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Estimates of both hockey-stick directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McResult {
    /// `H_ε(P, Q)`.
    pub plus: Estimate,
    /// `H_ε(Q, P)`.
    pub minus: Estimate,
}

/// Monte-Carlo estimate of both hockey-stick divergences.
///
/// `H_ε(P, Q)` is estimated as `E_P[(1 − e^{ε − L})_+]` and `H_ε(Q, P)` as
/// `E_Q[(1 − e^{ε + L})_+]`; both integrands lie in `[0, 1]`. Samples are
/// drawn in fixed-size chunks, each with its own ChaCha stream, and the chunk
/// sums are combined in order, so the result depends only on the seed.
pub fn hockey_stick_mc(inst: &ToyLcInstance, eps: f64, n_samples: usize, seed: u64) -> McResult {
    let chunks = n_samples.div_ceil(CHUNK);
    let picker = WeightedIndex::new(&inst.rho).expect("validated probabilities");
    let sums: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(n_samples - c * CHUNK);
            let mut acc = [0.0; 4];
            let mut y = [0.0; MAX_DIMENSION];
            for _ in 0..count {
                let j = picker.sample(&mut rng);
                for (k, yk) in y[..inst.dim].iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *yk = inst.shifts[j][k] + inst.scale * z;
                }
                let plus = (1.0 - (eps - inst.loss(&y[..inst.dim])).exp()).max(0.0);
                for yk in y[..inst.dim].iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *yk = inst.scale * z;
                }
                let minus = (1.0 - (eps + inst.loss(&y[..inst.dim])).exp()).max(0.0);
                acc[0] += plus;
                acc[1] += plus * plus;
                acc[2] += minus;
                acc[3] += minus * minus;
            }
            acc
        })
        .collect();
    let mut total = [0.0; 4];
    for s in &sums {
        for (t, x) in total.iter_mut().zip(s) {
            *t += x;
        }
    }
    let n = n_samples as f64;
    let estimate = |sum: f64, sq: f64| {
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        Estimate {
            mean,
            std_error: (var / n).sqrt(),
        }
    };
    McResult {
        plus: estimate(total[0], total[1]),
        minus: estimate(total[2], total[3]),
    }
}
