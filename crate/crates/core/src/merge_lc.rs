//! Linear combination `Σ λ_i θ_i` of DP-SGD models trained with independent
//! noise.
//!
//! At step `t` the merged update is a Gaussian mixture indexed by the subset
//! `J` of models whose mini-batch contains the differing record:
//! probability `ρ_J`, mean shift `Δ_J = Σ_{i∈J} λ_i η_i C_i` and noise scale
//! `s_λ² = Σ_i (λ_i η_i σ_i C_i)²`. Both accountants work from these per-step
//! parameters and compose over steps.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AccountingError, Result};
use crate::merge_rs::SweepOptions;
use crate::numeric::{binomial, ln_factorial, LogSumAccumulator};
use crate::pld::{compose_grouped, mixture_pld, pld_delta, pld_epsilon, PldConfig, PldPair};
use crate::rdp::{check_delta, rdp_to_dp, RdpCurve};
use crate::types::{
    simplex_lattice, Accountant, DpGuarantee, DpSgdSpec, FeasibleEntry, MechanismSpec,
    MergeWeights, OrderGrid,
};

/// Terms this far (in nats) below the running maximum are bounded in bulk.
pub const PRUNE_GAP: f64 = 60.0;

/// Largest number of models accepted by the enumeration.
pub const MAX_MODELS: usize = 6;

/// Per-step mixture parameters. Subsets are indexed by bitmask: bit `i` of
/// `J` set means model `i` sampled the differing record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcStepParams {
    n_models: usize,
    rho: Vec<f64>,
    shift: Vec<f64>,
    scale: f64,
    normalized: Vec<f64>,
}

impl LcStepParams {
    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn normalized_shift(&self) -> &[f64] {
        &self.normalized
    }

    /// True when the step leaks nothing: every subset with positive
    /// probability has zero shift.
    pub fn is_null(&self) -> bool {
        self.rho
            .iter()
            .zip(&self.shift)
            .all(|(&r, &d)| r == 0.0 || d == 0.0)
    }
}

/// Builds step parameters from per-model `(q, C, σ, η)` tuples.
fn step_params(tuples: &[(f64, f64, f64, f64)], lambda: &[f64], step: usize) -> Result<LcStepParams> {
    let n = tuples.len();
    let subsets = 1usize << n;
    let weights: Vec<f64> = tuples
        .iter()
        .zip(lambda)
        .map(|(&(_, c, _, eta), &l)| l * eta * c)
        .collect();
    let scale = tuples
        .iter()
        .zip(lambda)
        .map(|(&(_, c, s, eta), &l)| {
            let x = l * eta * s * c;
            x * x
        })
        .sum::<f64>()
        .sqrt();
    let mut rho = Vec::with_capacity(subsets);
    let mut shift = Vec::with_capacity(subsets);
    for j in 0..subsets {
        let mut r = 1.0;
        let mut d = 0.0;
        for (i, &(q, ..)) in tuples.iter().enumerate() {
            if j >> i & 1 == 1 {
                r *= q;
                d += weights[i];
            } else {
                r *= 1.0 - q;
            }
        }
        rho.push(r);
        shift.push(d);
    }
    let mut params = LcStepParams {
        n_models: n,
        rho,
        shift,
        scale,
        normalized: vec![0.0; subsets],
    };
    if scale > 0.0 {
        params.normalized = params.shift.iter().map(|d| d / scale).collect();
    } else if !params.is_null() {
        return Err(AccountingError::DegenerateNoise { step });
    }
    Ok(params)
}

fn check_specs(specs: &[DpSgdSpec], lambda: &MergeWeights) -> Result<()> {
    if specs.is_empty() {
        return Err(AccountingError::Empty("models"));
    }
    if specs.len() > MAX_MODELS {
        return Err(AccountingError::InvalidParameter(format!(
            "at most {MAX_MODELS} models are supported (got {})",
            specs.len()
        )));
    }
    if lambda.len() != specs.len() {
        return Err(AccountingError::DimensionMismatch {
            expected: specs.len(),
            found: lambda.len(),
        });
    }
    if let Some(model) = specs.iter().position(|s| !s.independent_noise()) {
        return Err(AccountingError::CorrelatedInputs { model });
    }
    Ok(())
}

fn step_tuples(specs: &[DpSgdSpec], t: usize) -> Vec<(f64, f64, f64, f64)> {
    specs.iter().map(|s| s.step(t)).collect()
}

/// Mixture parameters of step `t` for weights `lambda`.
pub fn derive_step_params(
    specs: &[DpSgdSpec],
    lambda: &MergeWeights,
    t: usize,
) -> Result<LcStepParams> {
    check_specs(specs, lambda)?;
    if let Some(s) = specs.iter().find(|s| s.steps() <= t) {
        return Err(AccountingError::InvalidParameter(format!(
            "step {t} is past the end of a run with {} steps",
            s.steps()
        )));
    }
    step_params(&step_tuples(specs, t), lambda.as_slice(), t)
}

/// Pads every run with zero-rate, zero-learning-rate steps up to the longest.
pub fn align_virtual_steps(specs: &[DpSgdSpec]) -> Vec<DpSgdSpec> {
    let longest = specs.iter().map(DpSgdSpec::steps).max().unwrap_or(0);
    specs
        .iter()
        .map(|s| {
            if s.steps() == longest {
                s.clone()
            } else {
                s.padded(longest - s.steps())
            }
        })
        .collect()
}

/// `|𝒩_α| = C(α + 2^N − 1, 2^N − 1)`.
pub fn composition_count(n_models: usize, alpha: u32) -> u128 {
    let k = 1u64 << n_models;
    binomial(alpha as u64 + k - 1, k - 1)
}

/// Default enumeration cap: enough for `α ≤ 64` with up to two models and
/// `α ≤ 16` with three.
pub fn default_enumeration_cap(n_models: usize) -> u128 {
    if n_models <= 2 {
        composition_count(2, 64)
    } else {
        composition_count(3, 16)
    }
}

/// Integer orders `2..=64` that fit under the enumeration cap for
/// `n_models` inputs. Always contains order 2, so an unusable cap still
/// surfaces as an error.
pub fn lc_default_grid(n_models: usize, cap: Option<u128>) -> OrderGrid {
    let cap = cap.unwrap_or_else(|| default_enumeration_cap(n_models));
    let top = (3..=64u32)
        .take_while(|&a| composition_count(n_models, a) <= cap)
        .last()
        .unwrap_or(2);
    OrderGrid::integers(2, top).expect("static range")
}

/// Every `γ` with `Σ_J γ_J = α` over `2^N` subsets, in lexicographic order.
/// Meant for inspection and tests; the accountant enumerates lazily.
pub fn gamma_compositions(n_models: usize, alpha: u32) -> Vec<Vec<u32>> {
    fn fill(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for c in 0..=left {
            cur[pos] = c;
            fill(pos + 1, left - c, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0; 1 << n_models];
    fill(0, alpha, &mut cur, &mut out);
    out
}

/// Per-step RDP bound at integer order `α ≥ 2`:
/// `(1/(α−1)) log Σ_γ [α!/Π γ_J!] B(γ) Π ρ_J^{γ_J}` with
/// `log B(γ) = ½[(Σ γ_J Δ̃_J)² − Σ γ_J Δ̃_J²]`.
pub fn lc_step_rdp(params: &LcStepParams, alpha: u32, cap: Option<u128>) -> Result<f64> {
    if alpha < 2 {
        return Err(AccountingError::NonIntegerOrder(alpha as f64));
    }
    let required = composition_count(params.n_models, alpha);
    let cap = cap.unwrap_or_else(|| default_enumeration_cap(params.n_models));
    if required > cap {
        return Err(AccountingError::EnumerationCapExceeded {
            order: alpha,
            models: params.n_models,
            required,
            cap,
        });
    }
    if params.is_null() {
        return Ok(0.0);
    }
    // Subsets with ρ_J = 0 force γ_J = 0.
    let live: Vec<(f64, f64)> = params
        .rho
        .iter()
        .zip(&params.normalized)
        .filter(|(r, _)| **r > 0.0)
        .map(|(&r, &d)| (r.ln(), d))
        .collect();
    let mut acc = LogSumAccumulator::new(PRUNE_GAP);
    let base = ln_factorial(alpha as u64);
    enumerate(&live, 0, alpha, base, 0.0, 0.0, &mut acc);
    let value = acc.finish() / (alpha as f64 - 1.0);
    Ok(value.max(0.0))
}

fn enumerate(
    live: &[(f64, f64)],
    pos: usize,
    left: u32,
    log_weight: f64,
    linear: f64,
    squares: f64,
    acc: &mut LogSumAccumulator,
) {
    let (ln_rho, d) = live[pos];
    if pos + 1 == live.len() {
        let g = left as f64;
        let lw = log_weight - ln_factorial(left as u64) + g * ln_rho;
        let lin = linear + g * d;
        let sq = squares + g * d * d;
        acc.push(lw + 0.5 * (lin * lin - sq));
        return;
    }
    for g in 0..=left {
        let gf = g as f64;
        enumerate(
            live,
            pos + 1,
            left - g,
            log_weight - ln_factorial(g as u64) + gf * ln_rho,
            linear + gf * d,
            squares + gf * d * d,
            acc,
        );
    }
}

/// Converts input mechanisms to DP-SGD runs. A Gaussian mechanism `(Δ, σ)`
/// becomes a single full-batch step with clip `Δ` and noise multiplier `σ/Δ`,
/// which models `N` noisy releases of one shared statistic.
pub fn lc_specs(models: &[MechanismSpec]) -> Result<Vec<DpSgdSpec>> {
    models
        .iter()
        .map(|m| match m {
            MechanismSpec::DpSgd(s) => Ok(s.clone()),
            MechanismSpec::Gaussian { sensitivity, noise } => {
                if *sensitivity > 0.0 {
                    DpSgdSpec::constant(1, 1.0, *sensitivity, noise / sensitivity, 1.0)
                } else {
                    DpSgdSpec::constant(1, 0.0, 1.0, *noise, 1.0)
                }
            }
        })
        .collect()
}

/// Bit patterns of one step's tuples, used as a memoization key.
fn step_key(tuples: &[(f64, f64, f64, f64)]) -> Vec<u64> {
    tuples
        .iter()
        .flat_map(|&(q, c, s, e)| [q.to_bits(), c.to_bits(), s.to_bits(), e.to_bits()])
        .collect()
}

fn step_curve(params: &LcStepParams, orders: &[u32], cap: Option<u128>) -> Result<Vec<f64>> {
    orders.iter().map(|&a| lc_step_rdp(params, a, cap)).collect()
}

/// LC RDP curve: per-step bounds summed over the aligned runs. With `memoize`
/// steps sharing hyperparameters are enumerated once; the sum is still taken
/// step by step, so the result is bitwise identical either way.
pub fn lc_rdp_curve_with(
    specs: &[DpSgdSpec],
    lambda: &MergeWeights,
    grid: &OrderGrid,
    cap: Option<u128>,
    memoize: bool,
) -> Result<RdpCurve> {
    check_specs(specs, lambda)?;
    let specs = align_virtual_steps(specs);
    let orders = grid.integer_orders()?;
    let mut cache: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
    let mut values = vec![0.0; orders.len()];
    for t in 0..specs[0].steps() {
        let tuples = step_tuples(&specs, t);
        let compute = || -> Result<Vec<f64>> {
            let params = step_params(&tuples, lambda.as_slice(), t)?;
            step_curve(&params, &orders, cap)
        };
        let step = if memoize {
            let key = step_key(&tuples);
            if !cache.contains_key(&key) {
                let v = compute()?;
                cache.insert(key.clone(), v);
            }
            cache[&key].clone()
        } else {
            compute()?
        };
        for (v, s) in values.iter_mut().zip(&step) {
            *v += s;
        }
    }
    RdpCurve::new(grid.clone(), values)
}

pub fn lc_rdp_curve(specs: &[DpSgdSpec], lambda: &MergeWeights, grid: &OrderGrid) -> Result<RdpCurve> {
    lc_rdp_curve_with(specs, lambda, grid, None, true)
}

/// Certified ε of the linear combination at `delta` (RDP accounting).
pub fn lc_dp_eps(specs: &[DpSgdSpec], lambda: &MergeWeights, delta: f64, grid: &OrderGrid) -> Result<f64> {
    check_delta(delta)?;
    Ok(rdp_to_dp(&lc_rdp_curve(specs, lambda, grid)?, delta)?.eps)
}

/// One row of the per-step audit trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub alpha: u32,
    pub eps: f64,
}

/// Per-step RDP contributions.
pub fn lc_rdp_trace(
    specs: &[DpSgdSpec],
    lambda: &MergeWeights,
    grid: &OrderGrid,
    cap: Option<u128>,
) -> Result<Vec<TraceRow>> {
    check_specs(specs, lambda)?;
    let specs = align_virtual_steps(specs);
    let orders = grid.integer_orders()?;
    let mut rows = Vec::with_capacity(specs[0].steps() * orders.len());
    let mut cache: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
    for t in 0..specs[0].steps() {
        let tuples = step_tuples(&specs, t);
        let key = step_key(&tuples);
        if !cache.contains_key(&key) {
            let params = step_params(&tuples, lambda.as_slice(), t)?;
            cache.insert(key.clone(), step_curve(&params, &orders, cap)?);
        }
        for (&alpha, &eps) in orders.iter().zip(&cache[&key]) {
            rows.push(TraceRow { step: t, alpha, eps });
        }
    }
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "alpha", "eps"])?;
    for r in rows {
        w.write_record([r.step.to_string(), r.alpha.to_string(), format!("{:?}", r.eps)])?;
    }
    w.flush()
}

/// Surrogate PLD of one step: `P = Σ_J ρ_J N(Δ_J, s²)` against `Q = N(0, s²)`.
pub fn lc_step_surrogate_pld(params: &LcStepParams, config: &PldConfig) -> Result<PldPair> {
    if params.is_null() {
        return Ok(PldPair::identity(config.spacing));
    }
    let components: Vec<(f64, f64)> = params
        .rho
        .iter()
        .copied()
        .zip(params.shift.iter().copied())
        .collect();
    mixture_pld(&components, params.scale, config)
}

/// Composed surrogate PLD of the whole merged run.
pub fn lc_pld(specs: &[DpSgdSpec], lambda: &MergeWeights, config: &PldConfig) -> Result<PldPair> {
    check_specs(specs, lambda)?;
    let specs = align_virtual_steps(specs);
    let keys: Vec<Vec<u64>> = (0..specs[0].steps())
        .map(|t| step_key(&step_tuples(&specs, t)))
        .collect();
    compose_grouped(&keys, config.spacing, config.max_cells, |t| {
        let params = step_params(&step_tuples(&specs, t), lambda.as_slice(), t)?;
        lc_step_surrogate_pld(&params, config)
    })
}

pub fn lc_pld_delta(
    specs: &[DpSgdSpec],
    lambda: &MergeWeights,
    eps: f64,
    config: &PldConfig,
) -> Result<f64> {
    Ok(pld_delta(&lc_pld(specs, lambda, config)?, eps))
}

pub fn lc_pld_epsilon(
    specs: &[DpSgdSpec],
    lambda: &MergeWeights,
    delta: f64,
    config: &PldConfig,
) -> Result<f64> {
    pld_epsilon(&lc_pld(specs, lambda, config)?, delta)
}

/// `Σ_i λ_i θ_i`.
pub fn lc_combine(models: &[Vec<f64>], lambda: &MergeWeights) -> Result<Vec<f64>> {
    let first = models.first().ok_or(AccountingError::Empty("models"))?;
    if lambda.len() != models.len() {
        return Err(AccountingError::DimensionMismatch {
            expected: models.len(),
            found: lambda.len(),
        });
    }
    let dim = first.len();
    let mut out = vec![0.0; dim];
    for (m, &l) in models.iter().zip(lambda.as_slice()) {
        if m.len() != dim {
            return Err(AccountingError::DimensionMismatch {
                expected: dim,
                found: m.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(m) {
            *o += l * x;
        }
    }
    Ok(out)
}

/// Lattice points whose linear combination meets `target`, in lexicographic
/// order. Entry semantics match [`crate::merge_rs::rs_feasible_set`].
pub fn lc_feasible_set(
    models: &[MechanismSpec],
    target: &DpGuarantee,
    resolution: f64,
    accountant: Accountant,
    options: &SweepOptions,
) -> Result<Vec<FeasibleEntry>> {
    let specs = align_virtual_steps(&lc_specs(models)?);
    let lattice = simplex_lattice(specs.len(), resolution)?;
    // Surface configuration errors once instead of per lattice point.
    check_specs(&specs, &lattice[0])?;
    let results: Vec<Result<Option<FeasibleEntry>>> = match accountant {
        Accountant::Rdp => {
            check_delta(target.delta)?;
            let grid = options
                .grid
                .clone()
                .unwrap_or_else(|| lc_default_grid(specs.len(), options.enumeration_cap));
            lattice
                .into_par_iter()
                .map(|lambda| {
                    let curve = lc_rdp_curve_with(&specs, &lambda, &grid, options.enumeration_cap, true)?;
                    let eps = match rdp_to_dp(&curve, target.delta) {
                        Ok(c) => c.eps,
                        Err(AccountingError::AllInfinite) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                    Ok((eps <= target.eps).then_some(FeasibleEntry {
                        weights: lambda,
                        eps,
                        delta: target.delta,
                    }))
                })
                .collect()
        }
        Accountant::Pld => lattice
            .into_par_iter()
            .map(|lambda| {
                let delta = lc_pld_delta(&specs, &lambda, target.eps, &options.pld)?;
                Ok((delta <= target.delta).then_some(FeasibleEntry {
                    weights: lambda,
                    eps: target.eps,
                    delta,
                }))
            })
            .collect(),
    };
    let mut out = Vec::new();
    for r in results {
        if let Some(e) = r? {
            out.push(e);
        }
    }
    Ok(out)
}
