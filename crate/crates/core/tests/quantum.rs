use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use nlcap::bell::chsh_functional;
use nlcap::error::Party;
use nlcap::io::{parse_state, StateSpec};
use nlcap::optimizer::stream_rng;
use nlcap::quantum::*;
use nlcap::solver::{nonlocal_capacity, DualWitness, SolverConfig};
use nlcap::{BoxShape, InputDist};
use num_complex::Complex64;

fn qubit() -> BoxShape {
    BoxShape::new(2, 2, 2, 2).unwrap()
}

fn qutrit() -> BoxShape {
    BoxShape::new(2, 2, 3, 3).unwrap()
}

#[test]
fn product_state_in_computational_bases_is_deterministic() {
    let rho = GammaState::new(0.0, 0.0).unwrap().density().unwrap();
    let b = born_box(&rho, &MeasurementSetup::computational(qubit()).unwrap()).unwrap();
    for a in 0..2 {
        for bb in 0..2 {
            assert_abs_diff_eq!(b.get(0, 0, a, bb), 1.0, epsilon = 1e-12);
        }
    }
}

#[test]
fn tsirelson_box_matches_closed_form_correlators() {
    // For (|00>+|11>)/sqrt2 and real bases at angles t, u: P(r=s) = cos^2(t-u).
    let rho = GammaState::new(1.0, 0.0).unwrap().density().unwrap();
    let b = born_box(&rho, &MeasurementSetup::tsirelson()).unwrap();
    let pi = std::f64::consts::PI;
    let alice = [0.0, pi / 4.0];
    let bob = [pi / 8.0, -pi / 8.0];
    for (a, ta) in alice.iter().enumerate() {
        for (bb, tb) in bob.iter().enumerate() {
            let c = (ta - tb).cos().powi(2);
            assert_abs_diff_eq!(b.get(0, 0, a, bb), c / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.get(1, 1, a, bb), c / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.get(0, 1, a, bb), (1.0 - c) / 2.0, epsilon = 1e-12);
        }
    }
}

#[test]
fn gamma_state_rejects_out_of_range() {
    assert!(GammaState::new(1.2, 0.0).is_err());
    assert!(GammaState::new(0.5, 0.5).is_err());
    assert_eq!(GammaState::new(0.5, 1.0).unwrap().local_dim(), 3);
}

#[test]
fn density_operator_checks() {
    let bad = DMatrix::from_element(4, 4, Complex64::new(0.25, 0.0));
    assert!(DensityOperator::new((2, 2), bad.clone()).is_ok());
    let mut neg = DMatrix::from_element(4, 4, Complex64::new(0.0, 0.0));
    neg[(0, 0)] = Complex64::new(1.5, 0.0);
    neg[(1, 1)] = Complex64::new(-0.5, 0.0);
    assert!(DensityOperator::new((2, 2), neg).is_err());
    assert!(DensityOperator::new((2, 3), bad).is_err());
}

#[test]
fn state_files() {
    let g = parse_state(r#"{"gamma1": 0.5, "gamma2": 1}"#).unwrap();
    assert!(matches!(g, StateSpec::Gamma(_)));
    assert_eq!(g.density(None).unwrap().dims(), (3, 3));
    let rho = GammaState::new(1.0, 0.0).unwrap().density().unwrap();
    let dense = parse_state(&serde_json::to_string(&rho).unwrap()).unwrap();
    assert_eq!(dense.density(None).unwrap(), rho);
    let rows: Vec<Vec<[f64; 2]>> = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| {
                    [
                        if (i == 0 || i == 3) && (j == 0 || j == 3) {
                            0.5
                        } else {
                            0.0
                        },
                        0.0,
                    ]
                })
                .collect()
        })
        .collect();
    let bare = parse_state(&serde_json::to_string(&rows).unwrap()).unwrap();
    assert_abs_diff_eq!(
        (bare.density(None).unwrap().matrix() - rho.matrix()).norm(),
        0.0,
        epsilon = 1e-12
    );
    assert!(parse_state(r#"{"gamma1": 2, "gamma2": 0}"#)
        .unwrap()
        .density(None)
        .is_err());
}

#[test]
fn setup_file_round_trip() {
    let s = MeasurementSetup::cglmp3();
    let back: MeasurementSetup = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    assert!(serde_json::from_str::<MeasurementSetup>(
        r#"{"alice":[[[[1,0],[0,0]],[[1,0],[0,0]]]],"bob":[]}"#
    )
    .is_err());
}

#[test]
fn zero_multipliers_give_zero_operators() {
    let rho = GammaState::new(0.7, 0.0).unwrap().density().unwrap();
    let setup = MeasurementSetup::tsirelson();
    let ops = effective_operators(
        &rho,
        setup.bob(),
        &vec![0.0; qubit().len()],
        &InputDist::uniform(2),
    )
    .unwrap();
    assert!(ops.ops.iter().all(|m| m.norm() == 0.0));

    let w =
        DualWitness::feasible(qubit(), &vec![0.0; qubit().len()], InputDist::uniform(2)).unwrap();
    let (out, value) = maximize_dual_over_setup(&rho, &setup, &w, 1e-12).unwrap();
    assert_eq!(value, 0.0);
    assert_eq!(out, setup);
}

#[test]
fn operator_objective_matches_direct_sum() {
    let rho = GammaState::new(1.0, 0.0).unwrap().density().unwrap();
    let setup = MeasurementSetup::tsirelson();
    let b = born_box(&rho, &setup).unwrap();
    let res = nonlocal_capacity(&b, &SolverConfig::default()).unwrap();
    let coeffs = res.witness.bell_coefficients();
    let ops = effective_operators(
        &rho,
        setup.bob(),
        &res.witness.lambda,
        &res.witness.input_dist,
    )
    .unwrap();
    let direct = b.dot(&coeffs);
    assert_abs_diff_eq!(ops.objective(setup.alice()), direct, epsilon = 1e-10);
    assert_abs_diff_eq!(
        functional_value(&rho, &setup, &coeffs).unwrap(),
        direct,
        epsilon = 1e-10
    );
    let bob = bob_operators(&rho, setup.alice(), qubit(), &coeffs).unwrap();
    assert_abs_diff_eq!(bob.objective(setup.bob()), direct, epsilon = 1e-10);
}

#[test]
fn equal_operators_are_stationary() {
    let m = DMatrix::from_fn(3, 3, |i, j| {
        Complex64::new((i + j) as f64, i as f64 - j as f64)
    });
    let ops = EffectiveOperators {
        party: Party::Alice,
        settings: 1,
        dim: 3,
        ops: vec![m.clone(), m.clone(), m],
    };
    let start = vec![haar_basis(3, &mut stream_rng(1, 0))];
    let before = ops.objective(&start);
    let out = optimize_party_bases(&ops, &start, &PairSweep::default()).unwrap();
    assert_abs_diff_eq!(out.objective, before, epsilon = 1e-12);
}

#[test]
fn commuting_diagonal_operators_pick_the_computational_basis() {
    let d = |x: f64, y: f64| {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(x, 0.0),
            Complex64::new(y, 0.0),
        ]))
    };
    let ops = EffectiveOperators {
        party: Party::Alice,
        settings: 1,
        dim: 2,
        ops: vec![d(1.0, 0.0), d(0.0, 1.0)],
    };
    let start = vec![haar_basis(2, &mut stream_rng(2, 0))];
    let out = optimize_party_bases(&ops, &start, &PairSweep::default()).unwrap();
    assert_abs_diff_eq!(out.objective, 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out.bases[0][0][0].norm(), 1.0, epsilon = 1e-6);
    assert_abs_diff_eq!(out.bases[0][1][1].norm(), 1.0, epsilon = 1e-6);
}

#[test]
fn random_qutrit_sweeps_converge_monotonically() {
    for seed in 0..5 {
        let mut rng = stream_rng(seed, 0);
        let ops: Vec<_> = (0..6)
            .map(|_| {
                let g = DMatrix::from_fn(3, 3, |_, _| {
                    let (re, im): (f64, f64) = (
                        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
                        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
                    );
                    Complex64::new(re, im)
                });
                &g + g.adjoint()
            })
            .collect();
        let ops = EffectiveOperators {
            party: Party::Alice,
            settings: 2,
            dim: 3,
            ops,
        };
        let start = vec![haar_basis(3, &mut rng), haar_basis(3, &mut rng)];
        let cfg = PairSweep {
            record: true,
            ..Default::default()
        };
        let out = optimize_party_bases(&ops, &start, &cfg).unwrap();
        assert!(out.residual < 1e-9, "residual {}", out.residual);
        for w in out.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(gram_residual(&out.bases[0]) < 1e-10);
    }
}

#[test]
fn dual_maximizer_is_stationary_and_restart_stable() {
    let rho = GammaState::new(1.0, 0.0).unwrap().density().unwrap();
    let b = born_box(&rho, &MeasurementSetup::tsirelson()).unwrap();
    let w = nonlocal_capacity(&b, &SolverConfig::default())
        .unwrap()
        .witness;
    let mut values = Vec::new();
    for k in 0..4 {
        let start = MeasurementSetup::haar(qubit(), &mut stream_rng(9, k)).unwrap();
        let (setup, v) = maximize_dual_over_setup(&rho, &start, &w, 1e-13).unwrap();
        let (_, again) = maximize_dual_over_setup(&rho, &setup, &w, 1e-13).unwrap();
        assert!(again - v < 1e-9);
        values.push(v);
    }
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Restarts either agree or sit in a strictly worse basin.
    assert!(values.iter().filter(|v| (best - **v).abs() < 1e-6).count() >= 2);
}

#[test]
fn cglmp_preset_reaches_the_known_maximum() {
    let rho = GammaState::new(1.0, 1.0).unwrap().density().unwrap();
    let f = nlcap::bell::cglmp3_functional();
    let v = functional_value(&rho, &MeasurementSetup::cglmp3(), f.coeffs()).unwrap();
    assert_abs_diff_eq!(v, 2.872934, epsilon = 1e-6);
    let opt = maximize_functional(
        &rho,
        &MeasurementSetup::cglmp3(),
        f.coeffs(),
        &SeeSaw::default(),
    )
    .unwrap();
    assert!(opt.value - v < 1e-9);
    assert_eq!(MeasurementSetup::cglmp3().shape(), qutrit());
}

#[test]
fn chsh_see_saw_reaches_tsirelson_from_random_starts() {
    let rho = GammaState::new(1.0, 0.0).unwrap().density().unwrap();
    let f = chsh_functional();
    let start = MeasurementSetup::haar(qubit(), &mut stream_rng(4, 0)).unwrap();
    let opt = maximize_functional(&rho, &start, f.coeffs(), &SeeSaw::default()).unwrap();
    assert_abs_diff_eq!(opt.value, 2.0 * 2f64.sqrt(), epsilon = 1e-8);
    assert!(opt.value >= opt.start_value);
}
