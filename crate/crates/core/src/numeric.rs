//! Small numerical helpers shared by the accountants.

use std::f64::consts::SQRT_2;
use std::sync::OnceLock;

/// `w · x` with the convention `0 · ∞ = 0`, so zero-weight non-private
/// models drop out of mixtures.
pub fn weighted(w: f64, x: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * x
    }
}

/// `log Σ exp(x_i)` with a max shift. Returns `-∞` for an empty or all `-∞`
/// input and `+∞` if any term is `+∞`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Streaming log-sum-exp accumulator.
///
/// Terms more than `prune_gap` nats below the running maximum are not added
/// exactly; their count and largest value are kept and added back at the end
/// as `count · max_pruned`, which can only over-estimate the sum.
#[derive(Debug, Clone)]
pub struct LogSumAccumulator {
    max: f64,
    scaled_sum: f64,
    prune_gap: f64,
    pruned_count: u64,
    pruned_max: f64,
}

impl LogSumAccumulator {
    pub fn new(prune_gap: f64) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
            prune_gap,
            pruned_count: 0,
            pruned_max: f64::NEG_INFINITY,
        }
    }

    pub fn push(&mut self, term: f64) {
        if term == f64::NEG_INFINITY {
            return;
        }
        if term > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - term).exp() + 1.0;
            self.max = term;
        } else if term < self.max - self.prune_gap {
            self.pruned_count += 1;
            self.pruned_max = self.pruned_max.max(term);
        } else {
            self.scaled_sum += (term - self.max).exp();
        }
    }

    pub fn pruned(&self) -> u64 {
        self.pruned_count
    }

    pub fn finish(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let kept = self.max + self.scaled_sum.ln();
        if self.pruned_count == 0 {
            return kept;
        }
        let remainder = (self.pruned_count as f64).ln() + self.pruned_max;
        log_sum_exp(&[kept, remainder])
    }
}

const FACTORIAL_TABLE: usize = 1024;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(FACTORIAL_TABLE);
        let mut acc = 0.0f64;
        table.push(0.0);
        for k in 1..FACTORIAL_TABLE {
            acc += (k as f64).ln();
            table.push(acc);
        }
        table
    })
}

/// `ln k!`, tabulated so every caller sees bit-identical values.
pub fn ln_factorial(k: u64) -> f64 {
    let table = ln_factorial_table();
    if (k as usize) < table.len() {
        return table[k as usize];
    }
    let mut acc = table[table.len() - 1];
    for i in table.len() as u64..=k {
        acc += (i as f64).ln();
    }
    acc
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Exact binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// `ln x` with `ln 0 = -∞`.
pub fn ln_or_neg_inf(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal survival function `1 − Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, evaluated on the side of the origin where the
/// subtraction does not cancel.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let p = if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    };
    p.max(0.0)
}

/// Smallest `k ≥ 0` (to 1e-12) with `1 − Φ(k) ≤ tail`.
pub fn normal_upper_quantile(tail: f64) -> f64 {
    assert!(tail > 0.0 && tail < 0.5, "tail must be in (0, 1/2)");
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while normal_sf(hi) > tail {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if normal_sf(mid) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Smallest `ε ∈ [0, hi]` (to `tol`) with `delta_of(ε) ≤ target`, assuming
/// `delta_of` is nonincreasing and `delta_of(hi) ≤ target`.
pub fn bisect_epsilon(delta_of: impl Fn(f64) -> f64, target: f64, hi: f64, tol: f64) -> f64 {
    if delta_of(0.0) <= target {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if delta_of(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
