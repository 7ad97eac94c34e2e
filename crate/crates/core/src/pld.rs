//! Discretized privacy loss distributions (PLDs).
//!
//! A mechanism pair `(P, Q)` has privacy loss `L = log(dP/dQ)`. Both
//! hockey-stick directions are read off one loss variable:
//!
//! ```text
//! H_ε(P, Q) = E_P[(1 − e^{ε − L})_+] = E_Q[(e^L − e^ε)_+]
//! H_ε(Q, P) = E_Q[(1 − e^{ε + L})_+]
//! ```
//!
//! A [`PldPair`] keeps two discretizations on a shared grid `L = k·h`:
//!
//! - `up`: losses rounded up ([`Rounding::Ceil`]), masses under `P`. It bounds
//!   `H_ε(P, Q)`, whose integrand is increasing in `L`.
//! - `down`: losses rounded down ([`Rounding::Floor`]), masses under `Q`. It
//!   bounds `H_ε(Q, P)`, whose integrand is decreasing in `L`.
//!
//! Keeping the `up` copy under `P` means each copy's integrand is bounded by 1,
//! so FFT round-off in tiny tail cells is never amplified by `e^L`.
//!
//! Tail mass outside the truncation window goes to the infinite atom when it
//! can raise that copy's δ (`+∞` for `up`, `−∞` for `down`). Tail mass on the
//! other side is folded into the nearest kept cell, which rounds it in the
//! pessimistic direction. All bounds stay valid upper bounds for `ε ≥ 0`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{AccountingError, Result};
use crate::numeric::{bisect_epsilon, ln_or_neg_inf, normal_interval, normal_upper_quantile};
use crate::types::{DpSgdSpec, MechanismSpec};

/// Mass (per side) that re-truncation after a convolution may move out of
/// the kept window.
pub const TRUNCATION_MASS: f64 = 1e-12;

/// Tolerance of [`pld_epsilon`].
pub const EPSILON_TOLERANCE: f64 = 1e-9;

/// Discretization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PldConfig {
    /// Loss grid spacing `h`.
    pub spacing: f64,
    /// Each truncated tail of the underlying Gaussian has mass below this.
    pub tail_mass: f64,
    /// Largest number of cells any PLD may hold.
    pub max_cells: usize,
}

impl Default for PldConfig {
    fn default() -> Self {
        Self {
            spacing: 1e-4,
            tail_mass: 1e-12,
            max_cells: 1 << 24,
        }
    }
}

impl PldConfig {
    pub fn with_spacing(spacing: f64) -> Self {
        Self {
            spacing,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(AccountingError::InvalidParameter(format!(
                "PLD spacing must be positive (got {})",
                self.spacing
            )));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass <= 1e-6) {
            return Err(AccountingError::InvalidParameter(format!(
                "tail mass must be in (0, 1e-6] (got {})",
                self.tail_mass
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Losses rounded up; masses under `P`.
    Ceil,
    /// Losses rounded down; masses under `Q`.
    Floor,
}

/// Cumulative sums used to evaluate δ in `O(log n)`.
#[derive(Debug, Clone)]
struct Tails {
    /// `Σ_{j ≥ k} m_j` (Ceil) or `Σ_{j < k} m_j` (Floor).
    mass: Vec<f64>,
    /// `Σ_{j ≥ k} m_j e^{−L_j}` (Ceil) or `Σ_{j < k} m_j e^{L_j}` (Floor).
    tilted: Vec<f64>,
}

/// One discretized loss distribution: cell `j` holds loss `(offset + j)·h`.
#[derive(Debug, Clone, Serialize)]
pub struct DiscretePld {
    spacing: f64,
    offset: i64,
    masses: Vec<f64>,
    atom_pos_inf: f64,
    atom_neg_inf: f64,
    rounding: Rounding,
    #[serde(skip)]
    tails: OnceLock<Arc<Tails>>,
}

impl PartialEq for DiscretePld {
    fn eq(&self, other: &Self) -> bool {
        self.spacing == other.spacing
            && self.offset == other.offset
            && self.masses == other.masses
            && self.atom_pos_inf == other.atom_pos_inf
            && self.atom_neg_inf == other.atom_neg_inf
            && self.rounding == other.rounding
    }
}

impl DiscretePld {
    fn new(
        spacing: f64,
        offset: i64,
        masses: Vec<f64>,
        atom_pos_inf: f64,
        atom_neg_inf: f64,
        rounding: Rounding,
    ) -> Self {
        Self {
            spacing,
            offset,
            masses,
            atom_pos_inf,
            atom_neg_inf,
            rounding,
            tails: OnceLock::new(),
        }
    }

    fn point_mass(spacing: f64, rounding: Rounding) -> Self {
        Self::new(spacing, 0, vec![1.0], 0.0, 0.0, rounding)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Loss value of the first cell.
    pub fn origin(&self) -> f64 {
        self.offset as f64 * self.spacing
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn loss(&self, j: usize) -> f64 {
        (self.offset + j as i64) as f64 * self.spacing
    }

    pub fn atom_pos_inf(&self) -> f64 {
        self.atom_pos_inf
    }

    pub fn atom_neg_inf(&self) -> f64 {
        self.atom_neg_inf
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.atom_pos_inf + self.atom_neg_inf
    }

    fn tails(&self) -> &Tails {
        self.tails.get_or_init(|| {
            let n = self.masses.len();
            let mut mass = vec![0.0; n + 1];
            let mut tilted = vec![0.0; n + 1];
            match self.rounding {
                Rounding::Ceil => {
                    for j in (0..n).rev() {
                        let m = self.masses[j];
                        mass[j] = mass[j + 1] + m;
                        tilted[j] = tilted[j + 1] + tilt(m, -self.loss(j));
                    }
                }
                Rounding::Floor => {
                    for j in 0..n {
                        let m = self.masses[j];
                        mass[j + 1] = mass[j] + m;
                        tilted[j + 1] = tilted[j] + tilt(m, self.loss(j));
                    }
                }
            }
            Arc::new(Tails { mass, tilted })
        })
    }

    /// Index of the first cell with loss strictly above `x`.
    fn first_above(&self, x: f64) -> usize {
        let k = (x / self.spacing).floor() as i64 + 1 - self.offset;
        let mut k = k.clamp(0, self.masses.len() as i64) as usize;
        // Guard against rounding in the division.
        while k > 0 && self.loss(k - 1) > x {
            k -= 1;
        }
        while k < self.masses.len() && self.loss(k) <= x {
            k += 1;
        }
        k
    }

    /// Index of the first cell with loss at or above `x`.
    fn first_at_or_above(&self, x: f64) -> usize {
        let k = (x / self.spacing).ceil() as i64 - self.offset;
        let mut k = k.clamp(0, self.masses.len() as i64) as usize;
        while k > 0 && self.loss(k - 1) >= x {
            k -= 1;
        }
        while k < self.masses.len() && self.loss(k) < x {
            k += 1;
        }
        k
    }

    /// `H_ε(P, Q)` from a Ceil copy: `Σ_{L_j > ε} m_j (1 − e^{ε − L_j}) + atom_{+∞}`.
    fn delta_plus(&self, eps: f64) -> f64 {
        debug_assert_eq!(self.rounding, Rounding::Ceil);
        let k = self.first_above(eps);
        let t = self.tails();
        let finite = t.mass[k] - eps.exp() * t.tilted[k];
        finite.max(0.0) + self.atom_pos_inf
    }

    /// `H_ε(Q, P)` from a Floor copy: `Σ_{L_j < −ε} m_j (1 − e^{ε + L_j}) + atom_{−∞}`.
    fn delta_minus(&self, eps: f64) -> f64 {
        debug_assert_eq!(self.rounding, Rounding::Floor);
        let k = self.first_at_or_above(-eps);
        let t = self.tails();
        let finite = t.mass[k] - eps.exp() * t.tilted[k];
        finite.max(0.0) + self.atom_neg_inf
    }

    /// Direct `O(n)` evaluation of this copy's hockey-stick divergence.
    pub fn delta_direct(&self, eps: f64) -> f64 {
        match self.rounding {
            Rounding::Ceil => {
                let s: f64 = self
                    .masses
                    .iter()
                    .enumerate()
                    .map(|(j, &m)| m * (1.0 - (eps - self.loss(j)).exp()).max(0.0))
                    .sum();
                s + self.atom_pos_inf
            }
            Rounding::Floor => {
                let s: f64 = self
                    .masses
                    .iter()
                    .enumerate()
                    .map(|(j, &m)| m * (1.0 - (eps + self.loss(j)).exp()).max(0.0))
                    .sum();
                s + self.atom_neg_inf
            }
        }
    }

    /// A unit mass at loss 0 and no atoms.
    pub fn is_identity(&self) -> bool {
        self.offset == 0
            && self.masses == [1.0]
            && self.atom_pos_inf == 0.0
            && self.atom_neg_inf == 0.0
    }

    fn max_loss(&self) -> f64 {
        self.loss(self.masses.len() - 1)
    }

    fn min_loss(&self) -> f64 {
        self.origin()
    }
}

fn tilt(m: f64, log_factor: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        (m.ln() + log_factor).exp()
    }
}

/// Both pessimistic discretizations of one loss variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PldPair {
    pub up: DiscretePld,
    pub down: DiscretePld,
}

impl PldPair {
    /// The identity for composition: no privacy loss.
    pub fn identity(spacing: f64) -> Self {
        Self {
            up: DiscretePld::point_mass(spacing, Rounding::Ceil),
            down: DiscretePld::point_mass(spacing, Rounding::Floor),
        }
    }

    pub fn spacing(&self) -> f64 {
        self.up.spacing
    }

    /// δ as `ε → ∞`.
    pub fn infinite_mass(&self) -> f64 {
        self.up.atom_pos_inf.max(self.down.atom_neg_inf)
    }

    pub fn delta_plus(&self, eps: f64) -> f64 {
        self.up.delta_plus(eps).clamp(0.0, 1.0)
    }

    pub fn delta_minus(&self, eps: f64) -> f64 {
        self.down.delta_minus(eps).clamp(0.0, 1.0)
    }

    /// An ε beyond which only the infinite atoms contribute.
    fn saturation_eps(&self) -> f64 {
        self.up.max_loss().max(-self.down.min_loss()).max(0.0) + self.spacing()
    }

    /// Writes both copies as CSV: `#` header rows with spacing and atoms, then
    /// `loss,mass` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (name, measure, pld) in [("ceil", "P", &self.up), ("floor", "Q", &self.down)] {
            writeln!(out, "# rounding={name} measure={measure}")?;
            writeln!(out, "# spacing={:?}", pld.spacing)?;
            writeln!(out, "# atom_pos_inf={:?}", pld.atom_pos_inf)?;
            writeln!(out, "# atom_neg_inf={:?}", pld.atom_neg_inf)?;
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["loss", "mass"])?;
            for (j, m) in pld.masses.iter().enumerate() {
                w.write_record([format!("{:?}", pld.loss(j)), format!("{m:?}")])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// The loss `L(z) = log(Σ_J ρ_J φ(z; Δ_J, s²) / φ(z; 0, s²))` of a Gaussian
/// mean-shift mixture against its unshifted component, `z ∼ N(0, s²)` under Q.
#[derive(Debug, Clone)]
struct MixtureLoss {
    /// `(ρ, Δ)` with `ρ > 0`, shifts merged.
    components: Vec<(f64, f64)>,
    /// `(ln ρ_J − Δ_J²/(2s²), Δ_J/s²)` for the shifted components.
    affine: Vec<(f64, f64)>,
    ln_rho_zero: f64,
    scale: f64,
}

impl MixtureLoss {
    fn new(components: &[(f64, f64)], scale: f64) -> Result<Self> {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for &(rho, shift) in components {
            if !(rho >= 0.0) || !(shift >= 0.0) || !shift.is_finite() {
                return Err(AccountingError::InvalidParameter(format!(
                    "mixture component ({rho}, {shift}) must have nonnegative weight and shift"
                )));
            }
            if rho == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(_, s)| *s == shift) {
                Some(c) => c.0 += rho,
                None => merged.push((rho, shift)),
            }
        }
        let total: f64 = merged.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AccountingError::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let s2 = scale * scale;
        let rho_zero: f64 = merged.iter().filter(|c| c.1 == 0.0).map(|c| c.0).sum();
        let affine = merged
            .iter()
            .filter(|c| c.1 > 0.0)
            .map(|&(rho, d)| (rho.ln() - d * d / (2.0 * s2), d / s2))
            .collect();
        Ok(Self {
            components: merged,
            affine,
            ln_rho_zero: ln_or_neg_inf(rho_zero),
            scale,
        })
    }

    fn is_constant(&self) -> bool {
        self.affine.is_empty()
    }

    fn max_shift(&self) -> f64 {
        self.components.iter().map(|c| c.1).fold(0.0, f64::max)
    }

    /// `(L(z), L'(z))`.
    fn eval(&self, z: f64) -> (f64, f64) {
        let mut max = self.ln_rho_zero;
        for &(c, a) in &self.affine {
            max = max.max(c + a * z);
        }
        let mut sum = if self.ln_rho_zero == f64::NEG_INFINITY {
            0.0
        } else {
            (self.ln_rho_zero - max).exp()
        };
        let mut slope = 0.0;
        for &(c, a) in &self.affine {
            let w = (c + a * z - max).exp();
            sum += w;
            slope += w * a;
        }
        (max + sum.ln(), slope / sum)
    }

    /// Solves `L(z) = target`, given a starting point left of the root.
    /// Returns `−∞` when the target is at or below the left asymptote.
    fn invert(&self, target: f64, start: f64) -> f64 {
        if target <= self.ln_rho_zero {
            return f64::NEG_INFINITY;
        }
        // L is convex and increasing: Newton from the left overshoots once and
        // then decreases monotonically to the root.
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut z = if start.is_finite() { start } else { -self.scale };
        for _ in 0..200 {
            let (l, d) = self.eval(z);
            let r = l - target;
            if r == 0.0 {
                return z;
            }
            if r < 0.0 {
                lo = lo.max(z);
            } else {
                hi = hi.min(z);
            }
            let mut next = z - r / d;
            if !next.is_finite() || next <= lo || next >= hi {
                next = if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else if lo.is_finite() {
                    lo + (lo.abs() + self.scale).max(1.0)
                } else {
                    hi - (hi.abs() + self.scale).max(1.0)
                };
            }
            if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) {
                return next;
            }
            z = next;
        }
        z
    }

    /// `Q(a ≤ Z < b)` with `Z ∼ N(0, s²)`.
    fn q_mass(&self, a: f64, b: f64) -> f64 {
        normal_interval(a / self.scale, b / self.scale)
    }

    /// `P(a ≤ Z < b)` with `Z ∼ Σ_J ρ_J N(Δ_J, s²)`.
    fn p_mass(&self, a: f64, b: f64) -> f64 {
        self.components
            .iter()
            .map(|&(rho, d)| rho * normal_interval((a - d) / self.scale, (b - d) / self.scale))
            .sum()
    }
}

/// PLD of `P = Σ_J ρ_J N(Δ_J, s²)` against `Q = N(0, s²)` in one dimension.
///
/// Cell masses are exact Gaussian probabilities of the preimage intervals of
/// the loss grid, which is possible because the loss is increasing in `z`.
pub fn mixture_pld(components: &[(f64, f64)], scale: f64, config: &PldConfig) -> Result<PldPair> {
    config.validate()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(AccountingError::InvalidParameter(format!(
            "noise scale must be positive (got {scale})"
        )));
    }
    let loss = MixtureLoss::new(components, scale)?;
    let h = config.spacing;
    if loss.is_constant() {
        return Ok(PldPair::identity(h));
    }

    let k = normal_upper_quantile(config.tail_mass);
    let z_lo = -k * scale;
    let z_hi = loss.max_shift() + k * scale;
    let i_lo = (loss.eval(z_lo).0 / h).floor() as i64;
    let mut i_hi = (loss.eval(z_hi).0 / h).ceil() as i64;
    if i_hi <= i_lo {
        i_hi = i_lo + 1;
    }
    let cells = (i_hi - i_lo) as usize;
    if cells > config.max_cells {
        return Err(AccountingError::InvalidParameter(format!(
            "PLD needs {cells} cells, above the cap of {}",
            config.max_cells
        )));
    }

    let mut bounds = Vec::with_capacity(cells + 1);
    let mut z = z_lo;
    for i in i_lo..=i_hi {
        z = loss.invert(i as f64 * h, z);
        bounds.push(z);
    }

    let mut p = Vec::with_capacity(cells);
    let mut q = Vec::with_capacity(cells);
    for w in bounds.windows(2) {
        p.push(loss.p_mass(w[0], w[1]));
        q.push(loss.q_mass(w[0], w[1]));
    }
    let z_first = bounds[0];
    let z_last = bounds[cells];

    // Ceil copy under P: cell [g_i, g_{i+1}) sits at g_{i+1}.
    p[0] += loss.p_mass(f64::NEG_INFINITY, z_first);
    let up_pos = loss.p_mass(z_last, f64::INFINITY);
    let up = DiscretePld::new(h, i_lo + 1, p, up_pos, 0.0, Rounding::Ceil);

    // Floor copy under Q: cell [g_i, g_{i+1}) sits at g_i.
    q[cells - 1] += loss.q_mass(z_last, f64::INFINITY);
    let down_neg = loss.q_mass(f64::NEG_INFINITY, z_first);
    let down = DiscretePld::new(h, i_lo, q, 0.0, down_neg, Rounding::Floor);

    Ok(PldPair { up, down })
}

/// Gaussian mechanism `P = N(Δ, σ²)`, `Q = N(0, σ²)`.
pub fn gaussian_pld(sensitivity: f64, noise: f64, config: &PldConfig) -> Result<PldPair> {
    mixture_pld(&[(1.0, sensitivity)], noise, config)
}

/// One Poisson-subsampled Gaussian step:
/// `P = (1−q) N(0, s²) + q N(Δ, s²)`, `Q = N(0, s²)`.
pub fn subsampled_gaussian_step_pld(
    q: f64,
    shift: f64,
    scale: f64,
    config: &PldConfig,
) -> Result<PldPair> {
    if !(0.0..=1.0).contains(&q) {
        return Err(AccountingError::InvalidParameter(format!(
            "sampling rate {q} is outside [0, 1]"
        )));
    }
    mixture_pld(&[(1.0 - q, 0.0), (q, shift)], scale, config)
}

/// `max{H_ε(P,Q), H_ε(Q,P)}` bounded from the pessimistic copies.
pub fn pld_delta(pld: &PldPair, eps: f64) -> f64 {
    pld.delta_plus(eps).max(pld.delta_minus(eps)).clamp(0.0, 1.0)
}

/// Smallest ε (to [`EPSILON_TOLERANCE`]) with `pld_delta(pld, ε) ≤ delta`.
pub fn pld_epsilon(pld: &PldPair, delta: f64) -> Result<f64> {
    epsilon_for_delta(|e| pld_delta(pld, e), delta, pld.infinite_mass(), pld.saturation_eps())
}

/// Shared inversion for any nonincreasing δ(ε) with limit `infinite_mass`.
pub fn epsilon_for_delta(
    delta_of: impl Fn(f64) -> f64,
    delta: f64,
    infinite_mass: f64,
    saturation_eps: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountingError::InvalidParameter(format!(
            "delta must be in (0, 1) (got {delta})"
        )));
    }
    if infinite_mass > delta {
        return Err(AccountingError::Unreachable {
            atom: infinite_mass,
            delta,
        });
    }
    let mut hi = saturation_eps.max(1.0);
    while delta_of(hi) > delta {
        hi *= 2.0;
    }
    Ok(bisect_epsilon(delta_of, delta, hi, EPSILON_TOLERANCE))
}

fn check_compatible(a: &DiscretePld, b: &DiscretePld) -> Result<()> {
    if (a.spacing - b.spacing).abs() > 1e-15 * a.spacing.abs().max(b.spacing.abs()) {
        return Err(AccountingError::SpacingMismatch(a.spacing, b.spacing));
    }
    if a.rounding != b.rounding {
        return Err(AccountingError::RoundingMismatch);
    }
    Ok(())
}

/// Sizes below which the direct `O(nm)` product is used.
const DIRECT_LIMIT: usize = 1 << 22;

fn convolve_masses(a: &[f64], b: &[f64], same: bool) -> Vec<f64> {
    let n = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 64 || a.len() * b.len() <= DIRECT_LIMIT {
        let mut out = vec![0.0; n];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out[i..].iter_mut().zip(b) {
                *o += x * y;
            }
        }
        return out;
    }
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let to_complex = |v: &[f64]| {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        buf
    };
    let mut fa = to_complex(a);
    forward.process(&mut fa);
    if same {
        for x in fa.iter_mut() {
            *x = *x * *x;
        }
    } else {
        let mut fb = to_complex(b);
        forward.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= *y;
        }
    }
    inverse.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..n].iter().map(|c| (c.re * scale).max(0.0)).collect()
}

fn convolve_one(a: &DiscretePld, b: &DiscretePld, same: bool, max_cells: usize) -> Result<DiscretePld> {
    check_compatible(a, b)?;
    if b.is_identity() {
        return Ok(a.clone());
    }
    if a.is_identity() {
        return Ok(b.clone());
    }
    let masses = convolve_masses(&a.masses, &b.masses, same);
    let atom_pos = 1.0 - (1.0 - a.atom_pos_inf) * (1.0 - b.atom_pos_inf);
    let atom_neg = 1.0 - (1.0 - a.atom_neg_inf) * (1.0 - b.atom_neg_inf);
    let out = retruncate(
        DiscretePld::new(
            a.spacing,
            a.offset + b.offset,
            masses,
            atom_pos,
            atom_neg,
            a.rounding,
        ),
        TRUNCATION_MASS,
    );
    if out.masses.len() > max_cells {
        return Err(AccountingError::InvalidParameter(format!(
            "composed PLD needs {} cells, above the cap of {max_cells}",
            out.masses.len()
        )));
    }
    Ok(out)
}

/// Drops up to `budget` mass from each end of the window. Mass that can raise
/// this copy's δ goes to the matching infinite atom; the rest is folded into
/// the nearest kept cell.
fn retruncate(mut pld: DiscretePld, budget: f64) -> DiscretePld {
    let n = pld.masses.len();
    let mut lo = 0;
    let mut cut_lo = 0.0;
    while lo + 1 < n && cut_lo + pld.masses[lo] <= budget {
        cut_lo += pld.masses[lo];
        lo += 1;
    }
    let mut hi = n;
    let mut cut_hi = 0.0;
    while hi > lo + 1 && cut_hi + pld.masses[hi - 1] <= budget {
        cut_hi += pld.masses[hi - 1];
        hi -= 1;
    }
    if lo == 0 && hi == n {
        return pld;
    }
    let mut masses = pld.masses[lo..hi].to_vec();
    let last = masses.len() - 1;
    match pld.rounding {
        Rounding::Ceil => {
            masses[0] += cut_lo;
            pld.atom_pos_inf += cut_hi;
        }
        Rounding::Floor => {
            pld.atom_neg_inf += cut_lo;
            masses[last] += cut_hi;
        }
    }
    DiscretePld::new(
        pld.spacing,
        pld.offset + lo as i64,
        masses,
        pld.atom_pos_inf,
        pld.atom_neg_inf,
        pld.rounding,
    )
}

/// PLD of the composition of two independent mechanisms.
pub fn convolve(a: &PldPair, b: &PldPair) -> Result<PldPair> {
    convolve_capped(a, b, PldConfig::default().max_cells)
}

pub fn convolve_capped(a: &PldPair, b: &PldPair, max_cells: usize) -> Result<PldPair> {
    Ok(PldPair {
        up: convolve_one(&a.up, &b.up, false, max_cells)?,
        down: convolve_one(&a.down, &b.down, false, max_cells)?,
    })
}

fn square(a: &PldPair, max_cells: usize) -> Result<PldPair> {
    Ok(PldPair {
        up: convolve_one(&a.up, &a.up, true, max_cells)?,
        down: convolve_one(&a.down, &a.down, true, max_cells)?,
    })
}

/// `t`-fold composition by repeated squaring.
pub fn self_convolve(a: &PldPair, t: u64) -> Result<PldPair> {
    self_convolve_capped(a, t, PldConfig::default().max_cells)
}

pub fn self_convolve_capped(a: &PldPair, t: u64, max_cells: usize) -> Result<PldPair> {
    if t == 0 {
        return Err(AccountingError::InvalidParameter(
            "self-convolution count must be >= 1".into(),
        ));
    }
    let mut result: Option<PldPair> = None;
    let mut base = a.clone();
    let mut t = t;
    loop {
        if t & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => convolve_capped(&r, &base, max_cells)?,
            });
        }
        t >>= 1;
        if t == 0 {
            break;
        }
        base = square(&base, max_cells)?;
    }
    Ok(result.expect("t >= 1"))
}

/// Composed PLD of a sequence of steps given as `(key, step PLD builder)`.
/// Steps sharing a key are built once and composed by repeated squaring.
pub(crate) fn compose_grouped<K, F>(keys: &[K], spacing: f64, max_cells: usize, mut build: F) -> Result<PldPair>
where
    K: std::hash::Hash + Eq + Clone,
    F: FnMut(usize) -> Result<PldPair>,
{
    let mut order: Vec<(K, usize, u64)> = Vec::new();
    let mut index: HashMap<K, usize> = HashMap::new();
    for (t, k) in keys.iter().enumerate() {
        match index.get(k) {
            Some(&i) => order[i].2 += 1,
            None => {
                index.insert(k.clone(), order.len());
                order.push((k.clone(), t, 1));
            }
        }
    }
    let mut acc: Option<PldPair> = None;
    for (_, first_step, count) in order {
        let step = build(first_step)?;
        if step.up.is_identity() && step.down.is_identity() {
            continue;
        }
        let composed = self_convolve_capped(&step, count, max_cells)?;
        acc = Some(match acc {
            None => composed,
            Some(a) => convolve_capped(&a, &composed, max_cells)?,
        });
    }
    Ok(acc.unwrap_or_else(|| PldPair::identity(spacing)))
}

/// PLD of a full DP-SGD run of one model.
pub fn dp_sgd_pld(spec: &DpSgdSpec, config: &PldConfig) -> Result<PldPair> {
    let keys: Vec<(u64, u64, u64)> = (0..spec.steps())
        .map(|t| {
            let (q, c, s, _) = spec.step(t);
            (q.to_bits(), c.to_bits(), s.to_bits())
        })
        .collect();
    compose_grouped(&keys, config.spacing, config.max_cells, |t| {
        let (q, c, s, _) = spec.step(t);
        subsampled_gaussian_step_pld(q, c, s * c, config)
    })
}

/// PLD of any supported mechanism.
pub fn mechanism_pld(spec: &MechanismSpec, config: &PldConfig) -> Result<PldPair> {
    match spec {
        MechanismSpec::Gaussian { sensitivity, noise } => gaussian_pld(*sensitivity, *noise, config),
        MechanismSpec::DpSgd(s) => dp_sgd_pld(s, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::normal_cdf;

    fn coarse() -> PldConfig {
        PldConfig::with_spacing(1e-3)
    }

    // Analytic Gaussian hockey-stick, kept local so the module tests stand alone.
    fn gaussian_delta(r: f64, eps: f64) -> f64 {
        normal_cdf(r / 2.0 - eps / r) - eps.exp() * normal_cdf(-r / 2.0 - eps / r)
    }

    #[test]
    fn zero_shift_is_identity() {
        let p = gaussian_pld(0.0, 1.0, &coarse()).unwrap();
        assert_eq!(p, PldPair::identity(1e-3));
        for eps in [0.0, 0.5, 3.0] {
            assert_eq!(pld_delta(&p, eps), 0.0);
        }
        let q0 = subsampled_gaussian_step_pld(0.0, 1.0, 1.0, &coarse()).unwrap();
        assert_eq!(q0, PldPair::identity(1e-3));
    }

    #[test]
    fn masses_sum_to_one() {
        for p in [
            gaussian_pld(1.0, 1.0, &coarse()).unwrap(),
            subsampled_gaussian_step_pld(0.1, 1.0, 0.8, &coarse()).unwrap(),
            mixture_pld(&[(0.5, 0.0), (0.3, 0.4), (0.2, 1.1)], 0.9, &coarse()).unwrap(),
        ] {
            assert!((p.up.total_mass() - 1.0).abs() < 1e-9);
            assert!((p.down.total_mass() - 1.0).abs() < 1e-9);
            assert!(p.up.masses().iter().all(|&m| m >= 0.0));
            assert_eq!(p.up.atom_neg_inf(), 0.0);
            assert_eq!(p.down.atom_pos_inf(), 0.0);
        }
    }

    #[test]
    fn gaussian_matches_analytic() {
        let h = 1e-4;
        let p = gaussian_pld(1.0, 1.0, &PldConfig::with_spacing(h)).unwrap();
        let d = pld_delta(&p, 1.0);
        let exact = gaussian_delta(1.0, 1.0);
        assert!((exact - 0.12693).abs() < 1e-5);
        assert!(d >= exact && d - exact <= 2.0 * h, "{d} vs {exact}");
        let tv = pld_delta(&p, 0.0);
        let exact_tv = 2.0 * normal_cdf(0.5) - 1.0;
        assert!((exact_tv - 0.38292).abs() < 1e-5);
        assert!(tv >= exact_tv && tv - exact_tv <= 2.0 * h);
        assert!(pld_delta(&p, 1e3) == p.infinite_mass());
    }

    #[test]
    fn full_sampling_matches_gaussian() {
        let a = subsampled_gaussian_step_pld(1.0, 1.3, 1.1, &coarse()).unwrap();
        let b = gaussian_pld(1.3, 1.1, &coarse()).unwrap();
        for eps in [0.0, 0.3, 1.0, 2.0] {
            assert!((pld_delta(&a, eps) - pld_delta(&b, eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn tables_match_direct_sums() {
        let p = mixture_pld(&[(0.6, 0.0), (0.3, 0.5), (0.1, 1.5)], 0.7, &coarse()).unwrap();
        for eps in [-0.5, 0.0, 0.01, 0.2, 0.7, 1.4, 5.0] {
            let fast = p.up.delta_plus(eps);
            let slow = p.up.delta_direct(eps);
            assert!((fast - slow).abs() < 1e-13, "up eps={eps}: {fast} vs {slow}");
            let fast = p.down.delta_minus(eps);
            let slow = p.down.delta_direct(eps);
            assert!((fast - slow).abs() < 1e-13, "down eps={eps}: {fast} vs {slow}");
        }
    }

    #[test]
    fn delta_is_monotone_and_bounded() {
        let p = subsampled_gaussian_step_pld(0.2, 1.0, 0.6, &coarse()).unwrap();
        let mut prev = 1.0;
        for i in 0..=200 {
            let d = pld_delta(&p, i as f64 * 0.1);
            assert!((0.0..=1.0).contains(&d));
            assert!(d <= prev + 1e-15);
            prev = d;
        }
    }

    #[test]
    fn coarser_grid_is_more_pessimistic() {
        let fine = gaussian_pld(1.0, 1.0, &PldConfig::with_spacing(1e-3)).unwrap();
        let coarse = gaussian_pld(1.0, 1.0, &PldConfig::with_spacing(2e-3)).unwrap();
        for i in 0..40 {
            let eps = i as f64 * 0.1;
            let exact = gaussian_delta(1.0, eps);
            let (f, c) = (pld_delta(&fine, eps), pld_delta(&coarse, eps));
            assert!(c >= f - 1e-15 && f >= exact - 1e-15, "eps={eps}: {c} {f} {exact}");
        }
    }

    #[test]
    fn epsilon_inversion() {
        let p = gaussian_pld(1.0, 1.0, &PldConfig::with_spacing(1e-4)).unwrap();
        assert_eq!(pld_epsilon(&p, 0.9).unwrap(), 0.0);
        let e = pld_epsilon(&p, gaussian_delta(1.0, 1.0)).unwrap();
        assert!((e - 1.0).abs() < 1e-3, "{e}");
        for eps in [0.1, 0.5, 2.0] {
            let d = pld_delta(&p, eps);
            assert!(pld_epsilon(&p, d).unwrap() <= eps + 1e-5);
        }
        let mut bad = p.clone();
        bad.up.atom_pos_inf = 1e-4;
        assert!(matches!(
            pld_epsilon(&bad, 1e-5),
            Err(AccountingError::Unreachable { .. })
        ));
    }

    #[test]
    fn convolution_identity_and_commutativity() {
        let a = gaussian_pld(0.8, 1.0, &coarse()).unwrap();
        let b = subsampled_gaussian_step_pld(0.3, 1.0, 0.9, &coarse()).unwrap();
        let id = PldPair::identity(1e-3);
        assert_eq!(convolve(&a, &id).unwrap(), a);
        let ab = convolve(&a, &b).unwrap();
        let ba = convolve(&b, &a).unwrap();
        assert_eq!(ab.up.offset(), ba.up.offset());
        for (x, y) in ab.up.masses().iter().zip(ba.up.masses()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300) + 1e-18);
        }
        let other = gaussian_pld(0.8, 1.0, &PldConfig::with_spacing(2e-3)).unwrap();
        assert!(matches!(
            convolve(&a, &other),
            Err(AccountingError::SpacingMismatch(..))
        ));
    }

    #[test]
    fn self_convolution_matches_gaussian_composition() {
        let h = 1e-4;
        let cfg = PldConfig::with_spacing(h);
        let a = gaussian_pld(1.0, 2.0, &cfg).unwrap();
        for k in [1u64, 2, 3, 4, 9] {
            let c = self_convolve(&a, k).unwrap();
            let r = (k as f64).sqrt() * 0.5;
            for eps in [0.0, 0.5, 1.0, 2.0] {
                let exact = gaussian_delta(r, eps);
                let d = pld_delta(&c, eps);
                assert!(d >= exact - 1e-12, "k={k} eps={eps}: {d} < {exact}");
                assert!(d - exact <= 3.0 * h * k as f64, "k={k} eps={eps}: {d} vs {exact}");
            }
            assert!((c.up.total_mass() - 1.0).abs() < 1e-9);
        }
        let two = self_convolve(&a, 2).unwrap();
        assert_eq!(two, convolve(&a, &a).unwrap());
        assert_eq!(self_convolve(&a, 1).unwrap(), a);
    }

    #[test]
    fn self_convolution_equals_repeated_convolution() {
        let a = subsampled_gaussian_step_pld(0.05, 1.0, 1.0, &coarse()).unwrap();
        let fast = self_convolve(&a, 7).unwrap();
        let mut slow = a.clone();
        for _ in 1..7 {
            slow = convolve(&slow, &a).unwrap();
        }
        assert!((fast.up.total_mass() - slow.up.total_mass()).abs() < 1e-9);
        for eps in [0.0, 0.2, 0.5, 1.0] {
            assert!((pld_delta(&fast, eps) - pld_delta(&slow, eps)).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_export_has_atoms_and_rows() {
        let p = gaussian_pld(1.0, 1.0, &PldConfig::with_spacing(0.1)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# rounding=ceil measure=P\n# spacing=0.1\n"));
        assert!(text.contains("# atom_pos_inf="));
        assert!(text.contains("loss,mass\n"));
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, p.up.len() + p.down.len() + 2);
    }

    #[test]
    fn padded_dp_sgd_is_unchanged() {
        let spec = DpSgdSpec::constant(3, 0.1, 1.0, 1.0, 0.1).unwrap();
        let a = dp_sgd_pld(&spec, &coarse()).unwrap();
        let b = dp_sgd_pld(&spec.padded(2), &coarse()).unwrap();
        assert_eq!(a, b);
    }
}
