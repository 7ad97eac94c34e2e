//! End-to-end acceptance battery. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dpmerge_core::baselines::{compare_prop10, joint_pld_bound, joint_rdp_bound};
use dpmerge_core::merge_lc::{
    align_virtual_steps, derive_step_params, lc_pld_epsilon, lc_rdp_curve, lc_step_rdp, lc_step_surrogate_pld,
};
use dpmerge_core::merge_rs::{rs_pld_delta, rs_rdp_curve};
use dpmerge_core::pld::{dp_sgd_pld, gaussian_pld, pld_delta, pld_epsilon, self_convolve, subsampled_gaussian_step_pld, PldConfig};
use dpmerge_core::rdp::{
    dp_sgd_rdp_curve, gaussian_rdp, gaussian_rdp_curve, rdp_to_dp, subsampled_gaussian_rdp, subsampled_gaussian_rdp_curve,
    RdpCurve,
};
use dpmerge_core::{validate_weights, AccountingError, DpSgdSpec, MergeWeights, OrderGrid};
use dpmerge_experiments::dpsgd::{run_dpsgd_sim, DpsgdSimConfig};
use dpmerge_experiments::mean_est::{mean_est_frontier, mean_est_min_mse, MeanEstConfig};
use dpmerge_experiments::{ExperimentError, MergeRule, Method};
use dpmerge_oracle::{
    analytic_gaussian_delta, hockey_stick_mc, hockey_stick_quadrature, renyi_quadrature, GaussianMixture1D,
    ToyLcInstance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|err| err.to_string())
}

fn weights(v: &[f64]) -> MergeWeights {
    validate_weights(v).expect("valid weights")
}

// Closed-form Gaussian RDP against Rényi quadrature.
fn c1() -> Outcome {
    let mut worst: f64 = 0.0;
    for ratio in [0.1, 0.5, 1.0, 2.0] {
        for sigma in [1.0, 2.5] {
            let p = e(GaussianMixture1D::gaussian(ratio * sigma, sigma * sigma))?;
            let q = e(GaussianMixture1D::gaussian(0.0, sigma * sigma))?;
            for alpha in [2.0, 4.0, 8.0, 16.0, 32.0] {
                let exact = e(renyi_quadrature(&p, &q, alpha))?;
                let closed = gaussian_rdp(ratio * sigma, sigma, alpha);
                let err = (exact - closed).abs();
                worst = worst.max(err);
                ensure(err <= 1e-8, || format!("ratio {ratio}, sigma {sigma}, alpha {alpha}: error {err:e}"))?;
            }
        }
    }
    Ok(format!("max |error| {worst:.2e} over 40 cases"))
}

// A one-model linear combination reduces to the subsampled Gaussian bound.
fn c2() -> Outcome {
    let mut worst: f64 = 0.0;
    for q in [0.0, 0.001, 0.01, 0.1, 1.0] {
        for sigma in [0.5, 1.0, 2.0] {
            let spec = e(DpSgdSpec::constant(1, q, 1.0, sigma, 1.0))?;
            let params = e(derive_step_params(&[spec], &MergeWeights::vertex(1, 0), 0))?;
            for alpha in 2..=32u32 {
                let lc = e(lc_step_rdp(&params, alpha, None))?;
                let direct = subsampled_gaussian_rdp(q, sigma, alpha);
                let err = (lc - direct).abs();
                worst = worst.max(err);
                ensure(err <= 1e-12, || {
                    format!("q {q}, sigma {sigma}, alpha {alpha}: {lc} vs {direct} (error {err:e})")
                })?;
            }
        }
    }
    Ok(format!("max |error| {worst:.2e} over 465 cases"))
}

fn random_curve(rng: &mut ChaCha8Rng, grid: &OrderGrid) -> Result<(RdpCurve, Option<(f64, f64)>), String> {
    if rng.random::<bool>() {
        let (d, s) = (rng.random_range(0.1..2.0), rng.random_range(0.5..3.0));
        Ok((gaussian_rdp_curve(d, s, grid), Some((d, s))))
    } else {
        let (q, s) = (rng.random_range(0.001..0.5), rng.random_range(0.5..3.0));
        Ok((e(subsampled_gaussian_rdp_curve(q, s, grid))?, None))
    }
}

// Random-selection RDP: bracketing, Jensen bound, vertices, permutations and
// the exact mixture divergence.
fn c3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = e(OrderGrid::integers(2, 64))?;
    let mut quadrature_checks = 0;
    for trial in 0..200 {
        let n = rng.random_range(2..=4usize);
        let mut curves = Vec::new();
        let mut gaussians = Vec::new();
        for _ in 0..n {
            let (c, g) = random_curve(&mut rng, &grid)?;
            curves.push(c);
            gaussians.push(g);
        }
        let mut raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        if rng.random_range(0..4) == 0 {
            raw[0] = 0.0;
        }
        let pi = weights(&raw);
        let rs = e(rs_rdp_curve(&curves, &pi))?;
        for (k, &a) in grid.orders().iter().enumerate() {
            let v = rs.values()[k];
            let active = || curves.iter().zip(pi.as_slice()).filter(|(_, &w)| w > 0.0);
            let hi = active().map(|(c, _)| c.values()[k]).fold(f64::NEG_INFINITY, f64::max);
            let jensen: f64 = active().map(|(c, &w)| w * c.values()[k]).sum();
            let single = active()
                .map(|(c, &w)| c.values()[k] + w.ln() / (a - 1.0))
                .fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * hi.abs().max(1.0);
            ensure(v <= hi + tol, || format!("trial {trial}, alpha {a}: {v} above max {hi}"))?;
            ensure(v >= jensen - tol, || format!("trial {trial}, alpha {a}: {v} below Jensen {jensen}"))?;
            ensure(v >= single - tol, || format!("trial {trial}, alpha {a}: {v} below {single}"))?;
        }
        for i in 0..n {
            let vertex = e(rs_rdp_curve(&curves, &MergeWeights::vertex(n, i)))?;
            ensure(vertex.values() == curves[i].values(), || format!("trial {trial}: vertex {i} differs"))?;
        }
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted: Vec<RdpCurve> = perm.iter().map(|&i| curves[i].clone()).collect();
        let again = e(rs_rdp_curve(&permuted, &pi.permuted(&perm)))?;
        for (x, y) in rs.values().iter().zip(again.values()) {
            ensure((x - y).abs() <= 1e-12 * x.abs().max(1.0), || {
                format!("trial {trial}: permutation changed {x} to {y}")
            })?;
        }
        // Exact mixture divergence never exceeds the bound.
        if gaussians.iter().all(Option::is_some) && quadrature_checks < 40 {
            let comps = |shifted: bool| {
                gaussians
                    .iter()
                    .zip(pi.as_slice())
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(g, &w)| {
                        let (d, s) = g.expect("gaussian");
                        (w, if shifted { d } else { 0.0 }, s * s)
                    })
                    .collect::<Vec<_>>()
            };
            let p = e(GaussianMixture1D::new(comps(true)))?;
            let q = e(GaussianMixture1D::new(comps(false)))?;
            for (k, &a) in grid.orders().iter().enumerate().filter(|(_, &a)| a == 2.0 || a == 8.0) {
                let exact = e(renyi_quadrature(&p, &q, a))?;
                let bound = rs.values()[k];
                ensure(exact <= bound + 1e-9, || {
                    format!("trial {trial}, alpha {a}: exact {exact} above bound {bound}")
                })?;
            }
            quadrature_checks += 1;
        }
    }
    Ok(format!("200 pairs, {quadrature_checks} checked against exact mixture divergence"))
}

// Certified δ dominates analytic, quadrature or Monte-Carlo oracles.
fn c4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = PldConfig::default();
    let h = cfg.spacing;
    let mut count = 0;
    let mut max_gap: f64 = 0.0;

    // Gaussian, single and composed.
    for i in 0..15 {
        let (d, s) = (rng.random_range(0.1..2.0), rng.random_range(0.5..2.0));
        let eps = rng.random_range(0.0..2.0);
        // Each composed factor rounds losses by at most h, so a t-fold
        // composition sits within t·h of the exact curve (2h for one release).
        let (pld, r, band) = if i < 10 {
            (e(gaussian_pld(d, s, &cfg))?, d / s, 2.0 * h)
        } else {
            let t = rng.random_range(2..=16u64);
            let composed = e(self_convolve(&e(gaussian_pld(d, s, &cfg))?, t))?;
            (composed, d / s * (t as f64).sqrt(), t as f64 * h)
        };
        let cert = pld_delta(&pld, eps);
        let exact = analytic_gaussian_delta(r, eps);
        let loose = analytic_gaussian_delta(r, (eps - band).max(0.0)) + 1e-10;
        ensure(cert >= exact, || format!("gaussian r={r}, eps={eps}: {cert} < {exact}"))?;
        ensure(cert <= loose, || format!("gaussian r={r}, eps={eps}: {cert} beyond band {loose}"))?;
        max_gap = max_gap.max(cert - exact);
        count += 1;
    }

    // One subsampled step, both directions, against quadrature.
    for _ in 0..10 {
        let (q, s) = (rng.random_range(0.01..0.5), rng.random_range(0.5..2.0));
        let eps = rng.random_range(0.0..1.5);
        let pld = e(subsampled_gaussian_step_pld(q, 1.0, s, &cfg))?;
        let p = e(GaussianMixture1D::new(vec![(1.0 - q, 0.0, s * s), (q, 1.0, s * s)]))?;
        let base = e(GaussianMixture1D::gaussian(0.0, s * s))?;
        let plus = e(hockey_stick_quadrature(&p, &base, eps))?;
        let minus = e(hockey_stick_quadrature(&base, &p, eps))?;
        ensure(pld.delta_plus(eps) >= plus - 1e-12, || format!("step q={q}: plus {} < {plus}", pld.delta_plus(eps)))?;
        ensure(pld.delta_minus(eps) >= minus - 1e-12, || {
            format!("step q={q}: minus {} < {minus}", pld.delta_minus(eps))
        })?;
        max_gap = max_gap.max(pld_delta(&pld, eps) - plus.max(minus));
        count += 1;
    }

    // Random selection over Gaussian mechanisms against the exact mixtures.
    for _ in 0..12 {
        let n = rng.random_range(2..=3usize);
        let mechs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.2..2.0), rng.random_range(0.5..2.0)))
            .collect();
        let pi = weights(&(0..n).map(|_| rng.random_range(0.05..1.0)).collect::<Vec<_>>());
        let eps = rng.random_range(0.0..1.5);
        let plds = mechs
            .iter()
            .map(|&(d, s)| e(gaussian_pld(d, s, &cfg)))
            .collect::<Result<Vec<_>, _>>()?;
        let cert = e(rs_pld_delta(&plds, &pi, eps))?;
        let mix = |shifted: bool| {
            GaussianMixture1D::new(
                mechs
                    .iter()
                    .zip(pi.as_slice())
                    .map(|(&(d, s), &w)| (w, if shifted { d } else { 0.0 }, s * s))
                    .collect(),
            )
        };
        let (p, q) = (e(mix(true))?, e(mix(false))?);
        let exact = e(hockey_stick_quadrature(&p, &q, eps))?.max(e(hockey_stick_quadrature(&q, &p, eps))?);
        ensure(cert >= exact - 1e-12, || format!("random selection: {cert} < {exact}"))?;
        max_gap = max_gap.max(cert - exact);
        count += 1;
    }

    // Linear-combination surrogate against toy multi-dimensional steps.
    let mut min_z = f64::INFINITY;
    for i in 0..13 {
        let dim = rng.random_range(2..=4usize);
        let specs: Vec<DpSgdSpec> = (0..2)
            .map(|_| {
                e(DpSgdSpec::constant(
                    1,
                    rng.random_range(0.05..0.5),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.7..2.0),
                    rng.random_range(0.1..1.0),
                ))
            })
            .collect::<Result<_, _>>()?;
        let l = rng.random_range(0.1..0.9);
        let lambda = weights(&[l, 1.0 - l]);
        let params = e(derive_step_params(&specs, &lambda, 0))?;
        // Instances 0..3 put every gradient on one axis at full norm; the
        // rest use random non-collinear directions.
        let grads: Vec<Vec<f64>> = specs
            .iter()
            .map(|s| {
                let c = s.clip()[0];
                if i < 3 {
                    let mut v = vec![0.0; dim];
                    v[0] = c;
                    v
                } else {
                    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let len = c * rng.random_range(0.6..1.0);
                    v.iter().map(|x| x * len / norm).collect()
                }
            })
            .collect();
        let shifts: Vec<Vec<f64>> = (0..4usize)
            .map(|mask| {
                (0..dim)
                    .map(|k| {
                        (0..2)
                            .filter(|m| mask >> m & 1 == 1)
                            .map(|m| lambda.as_slice()[m] * specs[m].learning_rate()[0] * grads[m][k])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let inst = e(ToyLcInstance::new(
            params.rho().to_vec(),
            shifts,
            params.shift().to_vec(),
            params.scale(),
        ))?;
        let eps = rng.random_range(0.0..1.0);
        let pld = e(lc_step_surrogate_pld(&params, &cfg))?;
        let mc = hockey_stick_mc(&inst, eps, 1_000_000, 100 + i as u64);
        for (name, cert, est) in [
            ("plus", pld.delta_plus(eps), mc.plus),
            ("minus", pld.delta_minus(eps), mc.minus),
        ] {
            ensure(cert >= est.mean - 3.0 * est.std_error, || {
                format!("toy {i} {name}: {cert} < {} - 3 * {}", est.mean, est.std_error)
            })?;
            if est.std_error > 0.0 {
                min_z = min_z.min((cert - est.mean) / est.std_error);
            }
        }
        count += 1;
    }
    Ok(format!(
        "{count} instances; max certified excess over exact oracles {max_gap:.2e}; min toy z-score {min_z:.2}"
    ))
}

// Mean-estimation frontiers with n = 100 and δ = 1e-5.
fn c5() -> Outcome {
    let config = MeanEstConfig::default();
    let result = e(mean_est_frontier(&config))?;
    let (s1, s2) = (config.sigma1.powi(2), config.sigma2.powi(2));
    let lambda_star = s2 / (s1 + s2);

    // (a) Along each method's path ε falls while MSE rises.
    for &m in &Method::ALL {
        let mut path: Vec<_> = result
            .points
            .iter()
            .filter(|p| p.method == m && (!m.is_linear_combination() || p.weights[0] >= lambda_star))
            .collect();
        path.sort_by(|a, b| a.weights[0].total_cmp(&b.weights[0]));
        for w in path.windows(2) {
            ensure(w[1].eps <= w[0].eps && w[1].utility >= w[0].utility, || {
                format!("{m}: not a tradeoff between {:?} and {:?}", w[0], w[1])
            })?;
        }
        ensure(path.first().unwrap().eps > path.last().unwrap().eps, || format!("{m}: flat ε"))?;
        ensure(result.frontier(m).len() >= 2, || format!("{m}: degenerate frontier"))?;
    }

    // (b) Minimal MSE at every target on a 50-point grid.
    let lo = result.points.iter().map(|p| p.eps).fold(f64::INFINITY, f64::min);
    let hi = result.points.iter().map(|p| p.eps).fold(0.0, f64::max);
    let mut compared = 0;
    let mut best_gain: f64 = 0.0;
    for (rs, lc) in [(Method::RsRdp, Method::LcRdp), (Method::RsPld, Method::LcPld)] {
        for k in 0..50 {
            let target = 0.5 * lo + (1.2 * hi - 0.5 * lo) * k as f64 / 49.0;
            let r = e(mean_est_min_mse(rs, target, &config))?;
            let l = e(mean_est_min_mse(lc, target, &config))?;
            match (r, l) {
                (Some(r), Some(l)) => {
                    ensure(l <= r + 1e-9, || format!("{lc} {l} above {rs} {r} at ε {target}"))?;
                    best_gain = best_gain.max(r - l);
                    compared += 1;
                }
                (Some(r), None) => return Err(format!("{lc} infeasible where {rs} reaches {r} at ε {target}")),
                _ => {}
            }
        }
    }

    // (c) PLD certificates never exceed RDP ones at the same weight.
    for p in result.points.iter().filter(|p| p.method.uses_pld()) {
        let rdp = if p.method.is_linear_combination() { Method::LcRdp } else { Method::RsRdp };
        let r = result
            .points
            .iter()
            .find(|q| q.method == rdp && q.weights == p.weights)
            .expect("matching weight");
        ensure(p.eps <= r.eps, || format!("{} ε {} above {rdp} ε {} at {:?}", p.method, p.eps, r.eps, p.weights))?;
    }
    Ok(format!(
        "4 monotone frontiers; {compared} matched targets, largest MSE reduction {best_gain:.3e}; PLD ≤ RDP at {} weights",
        result.points.len() / 4
    ))
}

// Joint-release RDP bound against advanced composition.
fn c6() -> Outcome {
    let mut n_points = 0;
    for t in [0.1, 0.25, 0.5, 1.0, 2.0, 4.0] {
        for n in [2u32, 4, 8, 16] {
            for delta in [1e-7, 1e-5, 1e-3, 0.4] {
                let r = e(compare_prop10(t, delta, n, delta / 10.0))?;
                ensure(r.holds && r.eps_rdp <= r.eps_com, || format!("{r:?}"))?;
                n_points += 1;
            }
        }
    }
    Ok(format!("{n_points} grid points"))
}

// Linear-combination certificates never exceed the joint release.
fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = OrderGrid::default_integer();
    let cfg = PldConfig::default();
    let delta = 1e-5;
    let mut gaps = (f64::INFINITY, f64::INFINITY);
    for trial in 0..20 {
        let specs: Vec<DpSgdSpec> = (0..2)
            .map(|_| {
                e(DpSgdSpec::constant(
                    rng.random_range(1..=200usize),
                    rng.random_range(0.001..0.1),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.8..3.0),
                    rng.random_range(0.01..1.0),
                ))
            })
            .collect::<Result<_, _>>()?;
        let l = rng.random_range(0.05..0.95);
        let lambda = weights(&[l, 1.0 - l]);
        let aligned = align_virtual_steps(&specs);

        let lc = e(lc_rdp_curve(&aligned, &lambda, &grid))?;
        let curves = specs
            .iter()
            .map(|s| e(dp_sgd_rdp_curve(s, &grid)))
            .collect::<Result<Vec<_>, _>>()?;
        let joint = e(joint_rdp_bound(&curves))?;
        for (a, (x, y)) in grid.orders().iter().zip(lc.values().iter().zip(joint.values())) {
            ensure(x <= y, || format!("trial {trial}, alpha {a}: LC {x} above joint {y}"))?;
        }
        let lc_eps = e(rdp_to_dp(&lc, delta))?.eps;
        let joint_eps = e(rdp_to_dp(&joint, delta))?.eps;
        ensure(lc_eps <= joint_eps, || format!("trial {trial}: RDP ε {lc_eps} above {joint_eps}"))?;

        let lc_pld = e(lc_pld_epsilon(&aligned, &lambda, delta, &cfg))?;
        let plds = specs
            .iter()
            .map(|s| e(dp_sgd_pld(s, &cfg)))
            .collect::<Result<Vec<_>, _>>()?;
        let joint_pld = e(pld_epsilon(&e(joint_pld_bound(&plds))?, delta))?;
        ensure(lc_pld <= joint_pld, || format!("trial {trial}: PLD ε {lc_pld} above {joint_pld}"))?;
        gaps = (gaps.0.min(joint_eps - lc_eps), gaps.1.min(joint_pld - lc_pld));
    }
    Ok(format!(
        "20 configurations; smallest ε margin RDP {:.3}, PLD {:.3}",
        gaps.0, gaps.1
    ))
}

// Synthetic DP-SGD demo and the correlated-checkpoint guard.
fn c8() -> Outcome {
    let config = DpsgdSimConfig::default();
    ensure(
        config.models[0].sampling_rate != config.models[1].sampling_rate
            && config.models[0].noise_multiplier != config.models[1].noise_multiplier,
        || "models must differ in (q, σ)".into(),
    )?;
    let result = e(run_dpsgd_sim(&config))?;
    let mut summary = Vec::new();
    for (k, (acc, target)) in result.targets.iter().enumerate() {
        let (a, b) = (result.standalone[0].eps[k].1, result.standalone[1].eps[k].1);
        ensure(a.min(b) < *target && *target < a.max(b), || {
            format!("{acc:?} target {target} not between {a} and {b}")
        })?;
        summary.push(format!("{acc:?} ε {a:.2}/{b:.2} target {target:.2}"));
    }
    for &m in &Method::ALL {
        let n = result.feasible(m).count();
        ensure(n > 0, || format!("{m} feasible set is empty"))?;
        summary.push(format!("{m} {n}"));
    }
    let correlated = DpsgdSimConfig {
        correlated: true,
        merges: vec![MergeRule::Lc],
        ..config
    };
    match run_dpsgd_sim(&correlated) {
        Err(ExperimentError::Accounting(AccountingError::CorrelatedInputs { .. })) => {}
        other => return Err(format!("correlated checkpoints not rejected: {other:?}")),
    }
    Ok(summary.join(", "))
}

const GAUSSIAN_PAIR: &str = r#"{"schema_version": 1, "seed": 11, "resolution": 0.25,
  "mechanisms": [{"kind": "gaussian", "sensitivity": 1, "noise": 1},
                 {"kind": "gaussian", "sensitivity": 1, "noise": 3}],
  "target": {"eps": 3, "delta": 1e-5},
  "compare": {"t": 1, "n": 4, "delta": 1e-5}}"#;

const SGD_PAIR: &str = r#"{"schema_version": 1, "seed": 11, "resolution": 0.25,
  "mechanisms": [
    {"kind": "dp_sgd", "steps": 50, "sampling_rate": 0.02, "clip": 1, "noise_multiplier": 1, "learning_rate": 0.1},
    {"kind": "dp_sgd", "steps": 80, "sampling_rate": 0.05, "clip": 1, "noise_multiplier": 2, "learning_rate": 0.1}],
  "target": {"eps": 2, "delta": 1e-5},
  "dpsgd_sim": {"resolution": 0.25}}"#;

fn run_cli(config: &Path, out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_dpmerge"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|err| err.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr))
    })
}

// Every command twice with the same seed gives byte-identical files.
fn c9() -> Outcome {
    let dir = e(tempfile::tempdir())?;
    let gauss = dir.path().join("gauss.json");
    let sgd = dir.path().join("sgd.json");
    e(std::fs::write(&gauss, GAUSSIAN_PAIR))?;
    e(std::fs::write(&sgd, SGD_PAIR))?;
    let runs: Vec<(&Path, Vec<&str>)> = vec![
        (&gauss, vec!["curve"]),
        (&gauss, vec!["curve", "--accountant", "pld"]),
        (&sgd, vec!["curve"]),
        (&gauss, vec!["feasible", "--merge", "rs", "--accountant", "rdp"]),
        (&gauss, vec!["feasible", "--merge", "rs", "--accountant", "pld"]),
        (&sgd, vec!["feasible", "--merge", "lc", "--accountant", "rdp"]),
        (&sgd, vec!["feasible", "--merge", "lc", "--accountant", "pld"]),
        (&gauss, vec!["experiment", "mean-est"]),
        (&sgd, vec!["experiment", "dpsgd-sim"]),
        (&gauss, vec!["compare"]),
    ];
    let mut files = 0;
    for (i, (config, args)) in runs.iter().enumerate() {
        let a = dir.path().join(format!("run{i}a"));
        let b = dir.path().join(format!("run{i}b"));
        run_cli(config, &a, args)?;
        run_cli(config, &b, args)?;
        let mut names: Vec<_> = e(std::fs::read_dir(&a))?
            .map(|d| d.expect("dir entry").file_name())
            .collect();
        names.sort();
        ensure(!names.is_empty(), || format!("{args:?} wrote nothing"))?;
        for name in names {
            let x = e(std::fs::read(a.join(&name)))?;
            let y = e(std::fs::read(b.join(&name)))?;
            ensure(x == y, || format!("{args:?}: {name:?} differs between runs"))?;
            files += 1;
        }
    }
    Ok(format!("{} commands, {files} files identical", runs.len()))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1 closed-form Gaussian RDP vs quadrature", c1, Duration::from_secs(10)),
        ("C2 one-model LC equals subsampled Gaussian RDP", c2, Duration::from_secs(5)),
        ("C3 random-selection RDP battery", c3, Duration::from_secs(10)),
        ("C4 certified delta dominates oracles", c4, Duration::from_secs(600)),
        ("C5 mean-estimation frontiers", c5, Duration::from_secs(120)),
        ("C6 RDP joint bound vs advanced composition", c6, Duration::from_secs(1)),
        ("C7 LC certificates vs joint release", c7, Duration::from_secs(300)),
        ("C8 synthetic DP-SGD demo", c8, Duration::from_secs(180)),
        ("C9 CLI determinism", c9, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({took:.1?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({took:.1?}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 9 acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
