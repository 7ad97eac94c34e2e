use crate::mixture::GaussianMixture1D;
use crate::{OracleError, Result};

// 15-point Kronrod nodes on [0, 1] with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 20_000;

fn kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]` to an
/// absolute error estimate of `tol`, floored at `1e-14` of the integral's
/// magnitude where round-off dominates. Returns `(value, error estimate)`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let mut parts = vec![{
        let (v, e) = kronrod(&f, a, b);
        (a, b, v, e)
    }];
    loop {
        let err: f64 = parts.iter().map(|p| p.3).sum();
        let magnitude: f64 = parts.iter().map(|p| p.2.abs()).sum();
        if err <= tol.max(1e-14 * magnitude) {
            let value = parts.iter().map(|p| p.2).sum();
            return Ok((value, err));
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(OracleError::QuadratureFailure {
                estimate: err,
                tolerance: tol.max(1e-14 * magnitude),
            });
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        for (x, y) in [(lo, mid), (mid, hi)] {
            let (v, e) = kronrod(&f, x, y);
            parts.push((x, y, v, e));
        }
    }
}

/// Integration window half-width in standard deviations per component.
const WINDOW_SDS: f64 = 12.0;
/// The window is widened until the log-integrand at its edges is this far
/// below the peak.
const EDGE_GAP: f64 = 60.0;
const MAX_EXTENSION_STEPS: usize = 100_000;

/// `D_α(p ‖ q) = (1/(α−1)) log ∫ p^α q^{1−α}`, evaluated in log space.
pub fn renyi_quadrature(p: &GaussianMixture1D, q: &GaussianMixture1D, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(OracleError::InvalidMixture(format!("order {alpha} must be > 1")));
    }
    let f = |x: f64| alpha * p.ln_pdf(x) + (1.0 - alpha) * q.ln_pdf(x);
    let (pl, ph) = p.window(WINDOW_SDS);
    let (ql, qh) = q.window(WINDOW_SDS);
    let (mut lo, mut hi) = (pl.min(ql), ph.max(qh));
    let step = p.max_sd().max(q.max_sd());

    let scan_max = |lo: f64, hi: f64, n: usize| {
        (0..=n)
            .map(|i| f(lo + (hi - lo) * i as f64 / n as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    // The tilted integrand can peak far outside the component windows, so
    // the window grows until both edges are negligible.
    let mut peak = scan_max(lo, hi, 4000);
    let mut steps = 0;
    while f(lo) > peak - EDGE_GAP {
        lo -= step;
        peak = peak.max(f(lo));
        steps += 1;
        if steps > MAX_EXTENSION_STEPS {
            return Err(OracleError::Divergent);
        }
    }
    while f(hi) > peak - EDGE_GAP {
        hi += step;
        peak = peak.max(f(hi));
        steps += 1;
        if steps > MAX_EXTENSION_STEPS {
            return Err(OracleError::Divergent);
        }
    }
    let peak = peak.max(scan_max(lo, hi, 20_000));
    let g = |x: f64| (f(x) - peak).exp();
    let (rough, _) = integrate(g, lo, hi, 1e-6 * step)?;
    let (value, _) = integrate(g, lo, hi, 1e-10 * rough)?;
    Ok((peak + value.ln()) / (alpha - 1.0))
}

/// `H_ε(p, q) = ∫ (p − e^ε q)_+`, integrating each region where the
/// integrand is positive between its bracketed roots.
pub fn hockey_stick_quadrature(p: &GaussianMixture1D, q: &GaussianMixture1D, eps: f64) -> Result<f64> {
    let scale = eps.exp();
    let g = |x: f64| p.pdf(x) - scale * q.pdf(x);
    let (pl, ph) = p.window(14.0);
    let (ql, qh) = q.window(14.0);
    let (lo, hi) = (pl.min(ql), ph.max(qh));
    let n = 20_000;
    let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let root = |mut a: f64, mut b: f64| {
        let sa = g(a) > 0.0;
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if (g(m) > 0.0) == sa {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let mut total = 0.0;
    let mut start: Option<f64> = (g(lo) > 0.0).then_some(lo);
    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (pa, pb) = (g(a) > 0.0, g(b) > 0.0);
        if pa != pb {
            let r = root(a, b);
            if pb {
                start = Some(r);
            } else if let Some(s) = start.take() {
                total += integrate(g, s, r, 1e-16)?.0;
            }
        }
    }
    if let Some(s) = start {
        total += integrate(g, s, hi, 1e-16)?.0;
    }
    Ok(total.clamp(0.0, 1.0))
}
