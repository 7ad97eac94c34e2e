//! Shared domain types: privacy guarantees, simplex weights, order grids and
//! mechanism hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{AccountingError, Result};

/// Tolerance for a weight vector to count as a point on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// An (ε, δ) differential privacy guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub eps: f64,
    pub delta: f64,
}

impl DpGuarantee {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(AccountingError::InvalidParameter(format!(
                "eps must be >= 0 (got {eps})"
            )));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(AccountingError::InvalidParameter(format!(
                "delta must be in [0, 1] (got {delta})"
            )));
        }
        Ok(Self { eps, delta })
    }
}

/// True iff `a` is at least as strong as `b` in both coordinates.
pub fn dominates(a: &DpGuarantee, b: &DpGuarantee) -> bool {
    a.eps <= b.eps && a.delta <= b.delta
}

/// A point on the probability simplex, read as selection probabilities (random
/// selection) or mixing coefficients (linear combination).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MergeWeights(Vec<f64>);

impl MergeWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The `i`-th simplex vertex in dimension `n`.
    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(i < n, "vertex index out of range");
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    pub fn is_vertex(&self) -> Option<usize> {
        let mut hit = None;
        for (i, &w) in self.0.iter().enumerate() {
            if w == 1.0 {
                hit = Some(i);
            } else if w != 0.0 {
                return None;
            }
        }
        hit
    }

    /// Applies the permutation `perm` (new position `k` holds old entry
    /// `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&p| self.0[p]).collect())
    }
}

impl std::ops::Index<usize> for MergeWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Normalizes `raw` onto the simplex.
pub fn validate_weights(raw: &[f64]) -> Result<MergeWeights> {
    if raw.is_empty() {
        return Err(AccountingError::Empty("weights"));
    }
    for (index, &value) in raw.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(AccountingError::NegativeWeight { index, value });
        }
    }
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        return Err(AccountingError::ZeroMass);
    }
    if (sum - 1.0).abs() <= SIMPLEX_TOLERANCE {
        return Ok(MergeWeights(raw.to_vec()));
    }
    Ok(MergeWeights(raw.iter().map(|w| w / sum).collect()))
}

/// All simplex points in dimension `n` whose coordinates are multiples of
/// `resolution`, in ascending lexicographic order.
pub fn simplex_lattice(n: usize, resolution: f64) -> Result<Vec<MergeWeights>> {
    if n == 0 {
        return Err(AccountingError::Empty("models"));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(AccountingError::InvalidParameter(format!(
            "resolution must be in (0, 1] (got {resolution})"
        )));
    }
    let steps = (1.0 / resolution).round();
    if (steps * resolution - 1.0).abs() > 1e-9 {
        return Err(AccountingError::InvalidParameter(format!(
            "resolution {resolution} does not divide 1"
        )));
    }
    let steps = steps as u32;
    let mut out = Vec::new();
    let mut counts = vec![0u32; n];
    fill_lattice(&mut counts, 0, steps, steps, &mut out);
    Ok(out)
}

fn fill_lattice(counts: &mut [u32], pos: usize, left: u32, total: u32, out: &mut Vec<MergeWeights>) {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        out.push(MergeWeights(
            counts.iter().map(|&c| c as f64 / total as f64).collect(),
        ));
        return;
    }
    for c in 0..=left {
        counts[pos] = c;
        fill_lattice(counts, pos + 1, left - c, total, out);
    }
}

/// Rényi orders at which curves are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderGrid {
    orders: Vec<f64>,
    integer_only: bool,
}

impl OrderGrid {
    pub fn new(orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(AccountingError::Empty("order grid"));
        }
        if orders.iter().any(|&a| !(a > 1.0) || !a.is_finite()) {
            return Err(AccountingError::InvalidParameter(
                "every order must be a finite value > 1".into(),
            ));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AccountingError::InvalidParameter(
                "orders must be strictly increasing".into(),
            ));
        }
        let integer_only = orders.iter().all(|&a| a.fract() == 0.0 && a >= 2.0);
        Ok(Self {
            orders,
            integer_only,
        })
    }

    /// Integer orders `lo..=hi`.
    pub fn integers(lo: u32, hi: u32) -> Result<Self> {
        if lo < 2 || hi < lo {
            return Err(AccountingError::InvalidParameter(format!(
                "integer orders need 2 <= lo <= hi (got {lo}..={hi})"
            )));
        }
        Self::new((lo..=hi).map(f64::from).collect())
    }

    /// {1.25, 1.5, 1.75} ∪ {2, …, 64}.
    pub fn default_mixed() -> Self {
        let mut orders = vec![1.25, 1.5, 1.75];
        orders.extend((2..=64).map(f64::from));
        Self::new(orders).expect("static grid")
    }

    /// {2, …, 64}.
    pub fn default_integer() -> Self {
        Self::integers(2, 64).expect("static grid")
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn is_integer_only(&self) -> bool {
        self.integer_only
    }

    /// The orders as integers, or the first non-integer order as an error.
    pub fn integer_orders(&self) -> Result<Vec<u32>> {
        self.orders
            .iter()
            .map(|&a| {
                if a.fract() == 0.0 && a >= 2.0 && a <= u32::MAX as f64 {
                    Ok(a as u32)
                } else {
                    Err(AccountingError::NonIntegerOrder(a))
                }
            })
            .collect()
    }

    pub fn max_order(&self) -> f64 {
        *self.orders.last().expect("grid is nonempty")
    }
}

/// Hyperparameters of one DP-SGD run, one entry per step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpSgdSpec {
    sampling_rate: Vec<f64>,
    clip: Vec<f64>,
    noise_multiplier: Vec<f64>,
    learning_rate: Vec<f64>,
    independent_noise: bool,
}

impl DpSgdSpec {
    pub fn new(
        sampling_rate: Vec<f64>,
        clip: Vec<f64>,
        noise_multiplier: Vec<f64>,
        learning_rate: Vec<f64>,
        independent_noise: bool,
    ) -> Result<Self> {
        let steps = sampling_rate.len();
        if steps == 0 {
            return Err(AccountingError::InvalidParameter(
                "a DP-SGD run needs at least one step".into(),
            ));
        }
        for (name, v) in [
            ("clip", &clip),
            ("noise_multiplier", &noise_multiplier),
            ("learning_rate", &learning_rate),
        ] {
            if v.len() != steps {
                return Err(AccountingError::InvalidParameter(format!(
                    "{name} has {} entries, expected {steps}",
                    v.len()
                )));
            }
        }
        if let Some(q) = sampling_rate.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(AccountingError::InvalidParameter(format!(
                "sampling rate {q} is outside [0, 1]"
            )));
        }
        if let Some(c) = clip.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(AccountingError::InvalidParameter(format!(
                "clip norm {c} must be positive"
            )));
        }
        if let Some(s) = noise_multiplier
            .iter()
            .find(|s| !(**s > 0.0 && s.is_finite()))
        {
            return Err(AccountingError::InvalidParameter(format!(
                "noise multiplier {s} must be positive"
            )));
        }
        // Zero learning rates are allowed: they mark virtual padding steps.
        if let Some(e) = learning_rate
            .iter()
            .find(|e| !(**e >= 0.0 && e.is_finite()))
        {
            return Err(AccountingError::InvalidParameter(format!(
                "learning rate {e} must be nonnegative"
            )));
        }
        Ok(Self {
            sampling_rate,
            clip,
            noise_multiplier,
            learning_rate,
            independent_noise,
        })
    }

    /// Constant hyperparameters over `steps` steps.
    pub fn constant(
        steps: usize,
        sampling_rate: f64,
        clip: f64,
        noise_multiplier: f64,
        learning_rate: f64,
    ) -> Result<Self> {
        Self::new(
            vec![sampling_rate; steps],
            vec![clip; steps],
            vec![noise_multiplier; steps],
            vec![learning_rate; steps],
            true,
        )
    }

    pub fn with_independent_noise(mut self, independent: bool) -> Self {
        self.independent_noise = independent;
        self
    }

    pub fn steps(&self) -> usize {
        self.sampling_rate.len()
    }

    pub fn sampling_rate(&self) -> &[f64] {
        &self.sampling_rate
    }

    pub fn clip(&self) -> &[f64] {
        &self.clip
    }

    pub fn noise_multiplier(&self) -> &[f64] {
        &self.noise_multiplier
    }

    pub fn learning_rate(&self) -> &[f64] {
        &self.learning_rate
    }

    pub fn independent_noise(&self) -> bool {
        self.independent_noise
    }

    /// Appends `extra` zero-rate, zero-learning-rate steps. The placeholder
    /// noise and clip copy the last real step so both stay positive.
    pub fn padded(&self, extra: usize) -> Self {
        let mut out = self.clone();
        let clip = *self.clip.last().expect("nonempty");
        let sigma = *self.noise_multiplier.last().expect("nonempty");
        for _ in 0..extra {
            out.sampling_rate.push(0.0);
            out.learning_rate.push(0.0);
            out.clip.push(clip);
            out.noise_multiplier.push(sigma);
        }
        out
    }

    /// Hyperparameters of step `t` as `(q, C, σ, η)`.
    pub fn step(&self, t: usize) -> (f64, f64, f64, f64) {
        (
            self.sampling_rate[t],
            self.clip[t],
            self.noise_multiplier[t],
            self.learning_rate[t],
        )
    }
}

/// Hyperparameters of one input model's training mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MechanismSpec {
    Gaussian { sensitivity: f64, noise: f64 },
    DpSgd(DpSgdSpec),
}

impl MechanismSpec {
    pub fn gaussian(sensitivity: f64, noise: f64) -> Result<Self> {
        if !(sensitivity >= 0.0 && sensitivity.is_finite()) {
            return Err(AccountingError::InvalidParameter(format!(
                "sensitivity {sensitivity} must be nonnegative"
            )));
        }
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(AccountingError::InvalidParameter(format!(
                "noise {noise} must be positive"
            )));
        }
        Ok(Self::Gaussian { sensitivity, noise })
    }

    pub fn as_dp_sgd(&self) -> Option<&DpSgdSpec> {
        match self {
            Self::DpSgd(s) => Some(s),
            Self::Gaussian { .. } => None,
        }
    }
}

/// Which accountant certifies a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accountant {
    Rdp,
    Pld,
}

/// One feasible weight vector with its certified guarantee.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibleEntry {
    pub weights: MergeWeights,
    pub eps: f64,
    pub delta: f64,
}

/// The feasible entry maximizing the linear utility `Σ w_i u_i`. Ties keep
/// the first entry.
pub fn best_by_linear_utility<'a>(
    entries: &'a [FeasibleEntry],
    utilities: &[f64],
) -> Option<&'a FeasibleEntry> {
    let score = |e: &FeasibleEntry| -> f64 {
        e.weights
            .as_slice()
            .iter()
            .zip(utilities)
            .map(|(w, u)| w * u)
            .sum()
    };
    let mut best: Option<(&FeasibleEntry, f64)> = None;
    for e in entries {
        let s = score(e);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((e, s));
        }
    }
    best.map(|(e, _)| e)
}
