//! Synthetic DP-SGD: logistic regression on two Gaussian blobs.
//!
//! Parameters are `d` weights followed by a bias. Each step Poisson-samples
//! the training set with rate `q`, clips per-example gradients to norm `C`,
//! adds `N(0, (σC)² I)` to their sum and takes a plain SGD step.

use dpmerge_core::merge_lc::{lc_combine, lc_feasible_set};
use dpmerge_core::merge_rs::{rs_feasible_set, rs_sample, SweepOptions};
use dpmerge_core::pld::{dp_sgd_pld, pld_epsilon, PldConfig};
use dpmerge_core::rdp::{dp_sgd_rdp_curve, rdp_to_dp};
use dpmerge_core::{Accountant, DpGuarantee, DpSgdSpec, MechanismSpec, MergeWeights, OrderGrid};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::frontier::{pareto_extract, FrontierPoint, Method, UtilitySense};
use crate::{stream, ExperimentError, MergeRule, Purpose, Result};

pub const MAX_FEATURES: usize = 16;
pub const MAX_EXAMPLES: usize = 5000;

/// Binary classification data; labels are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Parameter count including the bias.
    pub fn model_dim(&self) -> usize {
        self.dim() + 1
    }
}

/// Two unit-variance blobs whose centres are `separation` apart along the
/// diagonal, with balanced random labels.
pub fn gen_blobs(n: usize, dim: usize, separation: f64, seed: u64, purpose: Purpose) -> Result<Dataset> {
    if n == 0 || n > MAX_EXAMPLES {
        return Err(ExperimentError::InvalidConfig(format!(
            "example count {n} is outside 1..={MAX_EXAMPLES}"
        )));
    }
    if dim == 0 || dim > MAX_FEATURES {
        return Err(ExperimentError::InvalidConfig(format!(
            "feature count {dim} is outside 1..={MAX_FEATURES}"
        )));
    }
    let mut rng = stream(seed, purpose, 0);
    let offset = 0.5 * separation / (dim as f64).sqrt();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = if rng.random::<bool>() { 1.0 } else { 0.0 };
        let centre = if y == 1.0 { offset } else { -offset };
        features.push(
            (0..dim)
                .map(|_| centre + rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        labels.push(y);
    }
    Ok(Dataset { features, labels })
}

fn logit(theta: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    theta[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + theta[d]
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient of the logistic loss of one example.
pub fn example_gradient(theta: &[f64], x: &[f64], y: f64) -> Vec<f64> {
    let r = sigmoid(logit(theta, x)) - y;
    x.iter().map(|v| r * v).chain(std::iter::once(r)).collect()
}

/// Scales `g` down to norm at most `clip`.
pub fn clip_gradient(mut g: Vec<f64>, clip: f64) -> Vec<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > clip {
        let s = clip / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    g
}

/// All checkpoints of one DP-SGD run, starting from zero parameters.
pub fn dpsgd_train(spec: &DpSgdSpec, data: &Dataset, seed: u64) -> Result<Vec<Vec<f64>>> {
    let dim = data.model_dim();
    let mut theta = vec![0.0; dim];
    let mut trajectory = Vec::with_capacity(spec.steps() + 1);
    trajectory.push(theta.clone());
    for t in 0..spec.steps() {
        let (q, clip, sigma, lr) = spec.step(t);
        let mut rng = stream(seed, Purpose::Training, t as u64);
        let mut sum = vec![0.0; dim];
        for (x, &y) in data.features.iter().zip(&data.labels) {
            if rng.random::<f64>() < q {
                let g = clip_gradient(example_gradient(&theta, x, y), clip);
                sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
            }
        }
        let noise = Normal::new(0.0, sigma * clip)
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        for (th, s) in theta.iter_mut().zip(&sum) {
            *th -= lr * (s + noise.sample(&mut rng));
        }
        trajectory.push(theta.clone());
    }
    Ok(trajectory)
}

/// Fraction of examples classified correctly at threshold 1/2.
pub fn accuracy(theta: &[f64], data: &Dataset) -> Result<f64> {
    if theta.len() != data.model_dim() {
        return Err(dpmerge_core::AccountingError::DimensionMismatch {
            expected: data.model_dim(),
            found: theta.len(),
        }
        .into());
    }
    let correct = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| (logit(theta, x) > 0.0) == (y == 1.0))
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Holdout accuracy of a merge. Random selection reports the expectation
/// `Σ π_i acc_i`; the linear combination evaluates the averaged parameters.
pub fn merged_eval(models: &[Vec<f64>], weights: &MergeWeights, rule: MergeRule, holdout: &Dataset) -> Result<f64> {
    if weights.len() != models.len() {
        return Err(dpmerge_core::AccountingError::DimensionMismatch {
            expected: models.len(),
            found: weights.len(),
        }
        .into());
    }
    match rule {
        MergeRule::Rs => {
            let mut total = 0.0;
            for (m, &w) in models.iter().zip(weights.as_slice()) {
                total += w * accuracy(m, holdout)?;
            }
            Ok(total)
        }
        MergeRule::Lc => accuracy(&lc_combine(models, weights)?, holdout),
    }
}

/// Holdout accuracy of one seeded random-selection draw.
pub fn rs_sampled_eval(models: &[Vec<f64>], weights: &MergeWeights, holdout: &Dataset, seed: u64) -> Result<f64> {
    let i = rs_sample(weights, seed);
    accuracy(&models[i], holdout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub steps: usize,
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub clip: f64,
    pub learning_rate: f64,
}

impl ModelConfig {
    pub fn spec(&self, independent_noise: bool) -> Result<DpSgdSpec> {
        Ok(DpSgdSpec::constant(
            self.steps,
            self.sampling_rate,
            self.clip,
            self.noise_multiplier,
            self.learning_rate,
        )?
        .with_independent_noise(independent_noise))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpsgdSimConfig {
    pub n_train: usize,
    pub n_holdout: usize,
    pub features: usize,
    pub separation: f64,
    pub models: Vec<ModelConfig>,
    pub delta: f64,
    /// Target ε per accountant; `None` picks the midpoint of the standalone
    /// ε values under that accountant.
    pub target_eps: Option<f64>,
    pub resolution: f64,
    pub merges: Vec<MergeRule>,
    pub accountants: Vec<Accountant>,
    /// Marks the inputs as checkpoints of one run, sharing their noise.
    pub correlated: bool,
    pub seed: u64,
    pub pld_spacing: f64,
}

impl Default for DpsgdSimConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_holdout: 2000,
            features: 8,
            separation: 2.0,
            models: vec![
                ModelConfig {
                    steps: 100,
                    sampling_rate: 0.02,
                    noise_multiplier: 0.8,
                    clip: 1.0,
                    learning_rate: 0.02,
                },
                ModelConfig {
                    steps: 100,
                    sampling_rate: 0.05,
                    noise_multiplier: 2.0,
                    clip: 1.0,
                    learning_rate: 0.01,
                },
            ],
            delta: 1e-5,
            target_eps: None,
            resolution: 0.1,
            merges: vec![MergeRule::Rs, MergeRule::Lc],
            accountants: vec![Accountant::Rdp, Accountant::Pld],
            correlated: false,
            seed: 0,
            pld_spacing: 1e-4,
        }
    }
}

/// A trained input model with its standalone guarantees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandaloneModel {
    pub eps: Vec<(Accountant, f64)>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpsgdSimResult {
    pub standalone: Vec<StandaloneModel>,
    pub targets: Vec<(Accountant, f64)>,
    /// Every feasible lattice point of every method, with holdout accuracy.
    pub points: Vec<FrontierPoint>,
    pub frontiers: Vec<(Method, Vec<FrontierPoint>)>,
}

impl DpsgdSimResult {
    pub fn feasible(&self, method: Method) -> impl Iterator<Item = &FrontierPoint> {
        self.points.iter().filter(move |p| p.method == method)
    }
}

/// Trains the input models, then sweeps the feasible sets of every
/// requested merge rule and accountant at the target guarantee.
pub fn run_dpsgd_sim(config: &DpsgdSimConfig) -> Result<DpsgdSimResult> {
    if config.models.is_empty() {
        return Err(ExperimentError::InvalidConfig("at least one model is required".into()));
    }
    let specs = config
        .models
        .iter()
        .map(|m| m.spec(!config.correlated))
        .collect::<Result<Vec<_>>>()?;
    let mechanisms: Vec<MechanismSpec> = specs.iter().cloned().map(MechanismSpec::DpSgd).collect();
    let pld_config = PldConfig::with_spacing(config.pld_spacing);
    let grid = OrderGrid::default_integer();

    let train = gen_blobs(config.n_train, config.features, config.separation, config.seed, Purpose::Data)?;
    let holdout = gen_blobs(
        config.n_holdout,
        config.features,
        config.separation,
        config.seed,
        Purpose::Holdout,
    )?;
    let mut params = Vec::with_capacity(specs.len());
    let mut standalone = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let trajectory = dpsgd_train(spec, &train, config.seed.wrapping_add(i as u64))?;
        let theta = trajectory.last().expect("trajectory has the initial point").clone();
        let mut eps = Vec::new();
        for &acc in &config.accountants {
            let e = match acc {
                Accountant::Rdp => rdp_to_dp(&dp_sgd_rdp_curve(spec, &grid)?, config.delta)?.eps,
                Accountant::Pld => pld_epsilon(&dp_sgd_pld(spec, &pld_config)?, config.delta)?,
            };
            eps.push((acc, e));
        }
        standalone.push(StandaloneModel {
            eps,
            accuracy: accuracy(&theta, &holdout)?,
        });
        params.push(theta);
    }

    let options = SweepOptions {
        grid: Some(grid),
        pld: pld_config,
        enumeration_cap: None,
    };
    let mut targets = Vec::new();
    let mut points = Vec::new();
    for (k, &acc) in config.accountants.iter().enumerate() {
        let target_eps = config.target_eps.unwrap_or_else(|| {
            let (lo, hi) = standalone
                .iter()
                .map(|s| s.eps[k].1)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
            0.5 * (lo + hi)
        });
        targets.push((acc, target_eps));
        let target = DpGuarantee::new(target_eps, config.delta)?;
        for &rule in &config.merges {
            let entries = match rule {
                MergeRule::Rs => rs_feasible_set(&mechanisms, &target, config.resolution, acc, &options)?,
                MergeRule::Lc => lc_feasible_set(&mechanisms, &target, config.resolution, acc, &options)?,
            };
            for e in entries {
                points.push(FrontierPoint {
                    method: Method::new(rule, acc),
                    utility: merged_eval(&params, &e.weights, rule, &holdout)?,
                    weights: e.weights.as_slice().to_vec(),
                    eps: e.eps,
                    delta: e.delta,
                    utility_stderr: 0.0,
                });
            }
        }
    }
    let frontiers = Method::ALL
        .iter()
        .filter(|m| points.iter().any(|p| p.method == **m))
        .map(|&m| {
            let own: Vec<_> = points.iter().filter(|p| p.method == m).cloned().collect();
            (m, pareto_extract(&own, UtilitySense::Maximize))
        })
        .collect();
    Ok(DpsgdSimResult {
        standalone,
        targets,
        points,
        frontiers,
    })
}
