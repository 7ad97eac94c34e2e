use dpmerge_core::baselines::{compare_prop10, joint_rdp_bound};
use dpmerge_core::merge_lc::{lc_dp_eps, lc_rdp_curve};
use dpmerge_core::merge_rs::{rs_dp_eps, rs_feasible_set, rs_rdp_curve, SweepOptions};
use dpmerge_core::pld::{gaussian_pld, pld_delta, pld_epsilon, PldConfig};
use dpmerge_core::rdp::{compose_rdp, dp_sgd_rdp_curve, gaussian_rdp_curve, rdp_to_dp};
use dpmerge_core::{
    simplex_lattice, validate_weights, Accountant, DpGuarantee, DpSgdSpec, MechanismSpec, MergeWeights, OrderGrid,
};
use proptest::prelude::*;

fn sgd(steps: usize, q: f64, sigma: f64) -> DpSgdSpec {
    DpSgdSpec::constant(steps, q, 1.0, sigma, 0.1).unwrap()
}

#[test]
fn lc_vertex_matches_the_single_run() {
    let grid = OrderGrid::integers(2, 32).unwrap();
    let specs = [sgd(20, 0.05, 1.2), sgd(20, 0.1, 2.0)];
    for i in 0..2 {
        let lc = lc_rdp_curve(&specs, &MergeWeights::vertex(2, i), &grid).unwrap();
        let own = dp_sgd_rdp_curve(&specs[i], &grid).unwrap();
        for (a, b) in lc.values().iter().zip(own.values()) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn lc_is_symmetric_in_model_order() {
    let grid = OrderGrid::integers(2, 16).unwrap();
    let specs = [sgd(10, 0.05, 1.2), sgd(10, 0.1, 2.0)];
    let swapped = [specs[1].clone(), specs[0].clone()];
    let lambda = validate_weights(&[0.3, 0.7]).unwrap();
    let a = lc_dp_eps(&specs, &lambda, 1e-5, &grid).unwrap();
    let b = lc_dp_eps(&swapped, &lambda.permuted(&[1, 0]), 1e-5, &grid).unwrap();
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn lc_never_exceeds_joint_release() {
    let grid = OrderGrid::integers(2, 32).unwrap();
    let specs = [sgd(30, 0.02, 1.0), sgd(50, 0.05, 1.5)];
    let joint = joint_rdp_bound(&[
        dp_sgd_rdp_curve(&specs[0], &grid).unwrap(),
        dp_sgd_rdp_curve(&specs[1], &grid).unwrap(),
    ])
    .unwrap();
    for l in [0.1, 0.5, 0.9] {
        let lc = lc_rdp_curve(&specs, &validate_weights(&[l, 1.0 - l]).unwrap(), &grid).unwrap();
        for (a, b) in lc.values().iter().zip(joint.values()) {
            assert!(a <= b);
        }
    }
}

#[test]
fn rs_feasible_set_contains_the_quiet_vertex() {
    let models = [
        MechanismSpec::gaussian(1.0, 1.0).unwrap(),
        MechanismSpec::gaussian(1.0, 4.0).unwrap(),
    ];
    let quiet = rs_dp_eps(
        &[gaussian_rdp_curve(1.0, 4.0, &OrderGrid::default_mixed())],
        &MergeWeights::vertex(1, 0),
        1e-5,
    )
    .unwrap();
    let target = DpGuarantee::new(quiet + 0.01, 1e-5).unwrap();
    let set = rs_feasible_set(&models, &target, 0.1, Accountant::Rdp, &SweepOptions::default()).unwrap();
    assert!(set.iter().any(|e| e.weights.is_vertex() == Some(1)));
    assert!(!set.iter().any(|e| e.weights.is_vertex() == Some(0)));
    for pair in set.windows(2) {
        assert!(pair[0].weights.as_slice() < pair[1].weights.as_slice());
    }
}

#[test]
fn gaussian_pld_is_tighter_than_rdp() {
    let grid = OrderGrid::default_mixed();
    for (d, s) in [(1.0, 1.0), (0.5, 2.0), (1.0, 0.7)] {
        let pld = pld_epsilon(&gaussian_pld(d, s, &PldConfig::default()).unwrap(), 1e-5).unwrap();
        let rdp = rdp_to_dp(&gaussian_rdp_curve(d, s, &grid), 1e-5).unwrap().eps;
        assert!(pld < rdp, "{pld} vs {rdp}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_adds_curves(d in 0.1f64..2.0, s in 0.5f64..3.0, k in 1usize..6) {
        let grid = OrderGrid::default_mixed();
        let one = gaussian_rdp_curve(d, s, &grid);
        let many = compose_rdp(&vec![one.clone(); k]).unwrap();
        for (a, b) in many.values().iter().zip(one.values()) {
            prop_assert!((a - k as f64 * b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn conversion_is_monotone_in_delta(d in 0.1f64..2.0, s in 0.5f64..3.0, lo in 1e-9f64..1e-3) {
        let curve = gaussian_rdp_curve(d, s, &OrderGrid::default_mixed());
        let tight = rdp_to_dp(&curve, lo).unwrap().eps;
        let loose = rdp_to_dp(&curve, lo * 10.0).unwrap().eps;
        prop_assert!(loose <= tight);
    }

    #[test]
    fn rs_curve_is_bracketed(
        params in proptest::collection::vec((0.1f64..2.0, 0.5f64..3.0, 0.0f64..1.0), 2..5)
    ) {
        prop_assume!(params.iter().map(|p| p.2).sum::<f64>() > 1e-3);
        let grid = OrderGrid::integers(2, 32).unwrap();
        let curves: Vec<_> = params.iter().map(|&(d, s, _)| gaussian_rdp_curve(d, s, &grid)).collect();
        let pi = validate_weights(&params.iter().map(|p| p.2).collect::<Vec<_>>()).unwrap();
        let rs = rs_rdp_curve(&curves, &pi).unwrap();
        for k in 0..grid.len() {
            let active = curves.iter().zip(pi.as_slice()).filter(|(_, &w)| w > 0.0);
            let (mut hi, mut mean) = (f64::NEG_INFINITY, 0.0);
            for (c, &w) in active {
                hi = hi.max(c.values()[k]);
                mean += w * c.values()[k];
            }
            let v = rs.values()[k];
            prop_assert!(v <= hi * (1.0 + 1e-12) && v >= mean * (1.0 - 1e-12));
        }
    }

    #[test]
    fn pld_delta_decreases_in_eps(d in 0.1f64..2.0, s in 0.5f64..2.0) {
        let pld = gaussian_pld(d, s, &PldConfig::with_spacing(1e-3)).unwrap();
        let mut last = 1.0;
        for k in 0..40 {
            let v = pld_delta(&pld, k as f64 * 0.1);
            prop_assert!(v <= last && v >= 0.0);
            last = v;
        }
    }

    #[test]
    fn lattice_points_lie_on_the_simplex(n in 1usize..4, k in 1u32..12) {
        let lattice = simplex_lattice(n, 1.0 / k as f64).unwrap();
        let expected = (1..n as u64).fold(1u64, |acc, i| acc * (k as u64 + i) / i);
        prop_assert_eq!(lattice.len() as u64, expected);
        for w in &lattice {
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rdp_beats_advanced_composition(t in 0.05f64..5.0, n in 1u32..64, log_delta in -9.0f64..-0.31) {
        let delta = 10f64.powf(log_delta);
        let r = compare_prop10(t, delta, n, delta / 10.0).unwrap();
        prop_assert!(r.holds, "{:?}", r);
    }
}
