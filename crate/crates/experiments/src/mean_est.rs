//! Mean estimation with two Gaussian releases of a clipped sample mean.
//!
//! Model `i` releases `μ̂ + N(0, σ_i²)`. Random selection with weight `π` on
//! model 1 has error variance `π σ₁² + (1−π) σ₂²`; the linear combination
//! with weight `λ` has `λ² σ₁² + (1−λ)² σ₂²`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use dpmerge_core::merge_rs::{rs_dp_eps, rs_pld_epsilon};
use dpmerge_core::numeric::normal_cdf;
use dpmerge_core::pld::{gaussian_pld, pld_epsilon, PldConfig};
use dpmerge_core::rdp::{gaussian_rdp_curve, rdp_to_dp};
use dpmerge_core::{simplex_lattice, validate_weights, OrderGrid};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frontier::{pareto_extract, FrontierPoint, Method, UtilitySense};
use crate::{stream, ExperimentError, MergeRule, Purpose, Result};

/// Trials used to measure the sampling variance of the clipped mean.
pub const SAMPLING_TRIALS: u64 = 1_000_000;
const SAMPLING_SEED: u64 = 0x5eed;
const SAMPLING_CHUNK: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanEstConfig {
    pub n: usize,
    pub clip_range: (f64, f64),
    /// Replace-one sensitivity of the clipped mean: `(high − low)/n`.
    pub sensitivity: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub delta: f64,
    pub resolution: f64,
    pub trials: usize,
    pub seed: u64,
    pub pld_spacing: f64,
}

impl Default for MeanEstConfig {
    fn default() -> Self {
        let n = 100;
        let sensitivity = 2.0 / n as f64;
        Self {
            n,
            clip_range: (-1.0, 1.0),
            sensitivity,
            sigma1: 5.0 * sensitivity,
            sigma2: sensitivity,
            delta: 1e-5,
            resolution: 0.02,
            trials: 10_000,
            seed: 0,
            pld_spacing: 1e-4,
        }
    }
}

impl MeanEstConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.clip_range.0 <= self.clip_range.1) {
            return bad("clip range must have low <= high".into());
        }
        if !(self.sensitivity >= 0.0) {
            return bad("sensitivity must be nonnegative".into());
        }
        if !(self.sigma1 >= 0.0 && self.sigma2 >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must be in (0, 1)".into());
        }
        Ok(())
    }

    fn check_noisy(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(ExperimentError::InvalidConfig(
                "privacy accounting needs positive noise on both releases".into(),
            ));
        }
        Ok(())
    }

    fn pld(&self) -> PldConfig {
        PldConfig::with_spacing(self.pld_spacing)
    }
}

/// `n` standard normal draws clipped to the configured range.
pub fn gen_mean_data(config: &MeanEstConfig, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Data, 0);
    draw_clipped(&mut rng, config.n, config.clip_range)
}

fn draw_clipped(rng: &mut impl Rng, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal).clamp(lo, hi))
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `E[clip(X, a, b)]` for `X ∼ N(0, 1)`.
pub fn population_mean((a, b): (f64, f64)) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    a * normal_cdf(a) + b * (1.0 - normal_cdf(b)) + phi(a) - phi(b)
}

/// `E[(μ̂ − μ)²]` for the clipped sample mean, measured once per `(n, range)`
/// by Monte-Carlo and cached.
pub fn sampling_variance(config: &MeanEstConfig) -> f64 {
    type Key = (usize, u64, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, f64>>> = OnceLock::new();
    let key = (config.n, config.clip_range.0.to_bits(), config.clip_range.1.to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().expect("cache lock").get(&key) {
        return *v;
    }
    let mu = population_mean(config.clip_range);
    let chunks = SAMPLING_TRIALS / SAMPLING_CHUNK;
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(SAMPLING_SEED, Purpose::SamplingVariance, c);
            (0..SAMPLING_CHUNK)
                .map(|_| {
                    let m = mean(&draw_clipped(&mut rng, config.n, config.clip_range));
                    (m - mu) * (m - mu)
                })
                .sum()
        })
        .collect();
    let v = sums.iter().sum::<f64>() / SAMPLING_TRIALS as f64;
    cache.lock().expect("cache lock").insert(key, v);
    v
}

/// Error variance added by the merged release.
pub fn release_variance(method: Method, weight: f64, config: &MeanEstConfig) -> f64 {
    let (s1, s2) = (config.sigma1 * config.sigma1, config.sigma2 * config.sigma2);
    if method.is_linear_combination() {
        weight * weight * s1 + (1.0 - weight) * (1.0 - weight) * s2
    } else {
        weight * s1 + (1.0 - weight) * s2
    }
}

/// Release variance plus the sampling variance of the clipped mean.
pub fn mean_est_analytic_mse(method: Method, weight: f64, config: &MeanEstConfig) -> f64 {
    release_variance(method, weight, config) + sampling_variance(config)
}

/// Precomputed per-model accounting for the two releases.
struct Accounting {
    grid: OrderGrid,
    curves: Vec<dpmerge_core::rdp::RdpCurve>,
    plds: Option<Vec<dpmerge_core::pld::PldPair>>,
}

impl Accounting {
    fn new(config: &MeanEstConfig, with_pld: bool) -> Result<Self> {
        let grid = OrderGrid::default_mixed();
        let d = config.sensitivity;
        let curves = vec![
            gaussian_rdp_curve(d, config.sigma1, &grid),
            gaussian_rdp_curve(d, config.sigma2, &grid),
        ];
        let plds = if with_pld {
            Some(vec![
                gaussian_pld(d, config.sigma1, &config.pld())?,
                gaussian_pld(d, config.sigma2, &config.pld())?,
            ])
        } else {
            None
        };
        Ok(Self { grid, curves, plds })
    }

    fn eps(&self, method: Method, weight: f64, config: &MeanEstConfig) -> Result<f64> {
        let pi = validate_weights(&[weight, 1.0 - weight])?;
        let d = config.sensitivity;
        let sigma_lc = || release_variance(Method::LcRdp, weight, config).sqrt();
        let plds = || self.plds.as_ref().expect("PLDs built for PLD methods");
        Ok(match method {
            Method::RsRdp => rs_dp_eps(&self.curves, &pi, config.delta)?,
            Method::RsPld => rs_pld_epsilon(plds(), &pi, config.delta)?,
            Method::LcRdp => rdp_to_dp(&gaussian_rdp_curve(d, sigma_lc(), &self.grid), config.delta)?.eps,
            Method::LcPld => pld_epsilon(&gaussian_pld(d, sigma_lc(), &config.pld())?, config.delta)?,
        })
    }
}

/// Certified ε at the configured δ for one method and weight.
pub fn mean_est_eps(method: Method, weight: f64, config: &MeanEstConfig) -> Result<f64> {
    config.validate()?;
    config.check_noisy()?;
    Accounting::new(config, method.uses_pld())?.eps(method, weight, config)
}

/// Every evaluated point plus the Pareto frontier of each method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanEstFrontier {
    pub points: Vec<FrontierPoint>,
    pub frontiers: Vec<(Method, Vec<FrontierPoint>)>,
}

impl MeanEstFrontier {
    pub fn frontier(&self, method: Method) -> &[FrontierPoint] {
        &self
            .frontiers
            .iter()
            .find(|(m, _)| *m == method)
            .expect("all methods present")
            .1
    }
}

/// Certified ε and analytic MSE on the weight lattice for all four methods.
pub fn mean_est_frontier(config: &MeanEstConfig) -> Result<MeanEstFrontier> {
    config.validate()?;
    config.check_noisy()?;
    let acc = Accounting::new(config, true)?;
    let lattice = simplex_lattice(2, config.resolution)?;
    let sampling = sampling_variance(config);
    let jobs: Vec<(Method, f64)> = Method::ALL
        .iter()
        .flat_map(|&m| lattice.iter().map(move |w| (m, w[0])))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(method, w)| {
            Ok(FrontierPoint {
                method,
                weights: vec![w, 1.0 - w],
                eps: acc.eps(method, w, config)?,
                delta: config.delta,
                utility: release_variance(method, w, config) + sampling,
                utility_stderr: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let frontiers = Method::ALL
        .iter()
        .map(|&m| {
            let own: Vec<_> = points.iter().filter(|p| p.method == m).cloned().collect();
            (m, pareto_extract(&own, UtilitySense::Minimize))
        })
        .collect();
    Ok(MeanEstFrontier { points, frontiers })
}

/// Smallest analytic MSE over continuous weights whose certified ε is at
/// most `target_eps`, or `None` if no weight qualifies.
///
/// Along the search path the release variance increases and ε decreases:
/// for random selection the path moves weight onto the noisier model, for
/// the linear combination it starts at the variance-minimizing weight.
pub fn mean_est_min_mse(method: Method, target_eps: f64, config: &MeanEstConfig) -> Result<Option<f64>> {
    config.validate()?;
    config.check_noisy()?;
    let acc = Accounting::new(config, method.uses_pld())?;
    let (s1, s2) = (config.sigma1 * config.sigma1, config.sigma2 * config.sigma2);
    // Weight on model 1 at the noisy end of the path.
    let noisy_end = if s1 >= s2 { 1.0 } else { 0.0 };
    let quiet_end = if method.is_linear_combination() {
        s2 / (s1 + s2)
    } else {
        1.0 - noisy_end
    };
    let at = |t: f64| quiet_end + t * (noisy_end - quiet_end);
    let feasible = |t: f64| -> Result<bool> { Ok(acc.eps(method, at(t), config)? <= target_eps) };
    if !feasible(1.0)? {
        return Ok(None);
    }
    let t = if feasible(0.0)? {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    Ok(Some(mean_est_analytic_mse(method, at(t), config)))
}

/// Monte-Carlo MSE of one merging rule at one weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalPoint {
    pub rule: MergeRule,
    pub weight: f64,
    pub mse: f64,
    pub stderr: f64,
    pub analytic: f64,
}

pub const MIN_TRIALS: usize = 10_000;

/// Monte-Carlo MSE over fresh data and noise per trial, for both merging
/// rules at every lattice weight.
pub fn mean_est_empirical(config: &MeanEstConfig) -> Result<Vec<EmpiricalPoint>> {
    config.validate()?;
    if config.trials < MIN_TRIALS {
        return Err(ExperimentError::InvalidConfig(format!(
            "at least {MIN_TRIALS} trials are required (got {})",
            config.trials
        )));
    }
    let lattice = simplex_lattice(2, config.resolution)?;
    let mu = population_mean(config.clip_range);
    let mut out = Vec::new();
    for (k, w) in lattice.iter().enumerate() {
        let w = w[0];
        for rule in [MergeRule::Rs, MergeRule::Lc] {
            let lc = rule == MergeRule::Lc;
            let base = ((2 * k + lc as usize) as u64) << 32;
            let errors: Vec<f64> = (0..config.trials as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(config.seed, Purpose::Trial, base | i);
                    let m = mean(&draw_clipped(&mut rng, config.n, config.clip_range));
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let noise = if lc {
                        w * config.sigma1 * z1 + (1.0 - w) * config.sigma2 * z2
                    } else if rng.random::<f64>() < w {
                        config.sigma1 * z1
                    } else {
                        config.sigma2 * z2
                    };
                    let e = m + noise - mu;
                    e * e
                })
                .collect();
            let n = errors.len() as f64;
            let mse = errors.iter().sum::<f64>() / n;
            let var = errors.iter().map(|e| (e - mse) * (e - mse)).sum::<f64>() / (n - 1.0);
            let method = if lc { Method::LcRdp } else { Method::RsRdp };
            out.push(EmpiricalPoint {
                rule,
                weight: w,
                mse,
                stderr: (var / n).sqrt(),
                analytic: mean_est_analytic_mse(method, w, config),
            });
        }
    }
    Ok(out)
}
