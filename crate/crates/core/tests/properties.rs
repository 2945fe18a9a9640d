use proptest::prelude::*;
use slr_core::linalg;
use slr_core::montecarlo;
use slr_core::optimizer;
use slr_core::predictor::{self, ParamPair};
use slr_core::risk::{self, GradMode, OverlapCoords, RiskModel};
use slr_core::task::{self, TaskParams};
use slr_core::{rng, special};

fn task(d: usize, l: usize, lambda: f64, eps: f64) -> TaskParams {
    task::make_task(
        d,
        l,
        std::f64::consts::FRAC_1_SQRT_2,
        eps,
        lambda,
        None,
        &mut rng::stream(5, rng::TASK_STREAM),
    )
    .unwrap()
}

/// Realizable overlaps from two unit 4-vectors with the given seed.
fn coords_from_seed(seed: u64) -> OverlapCoords {
    montecarlo::random_coords(&mut rng::stream(seed, 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zeta_even_bounded_and_above_jensen(t in -6.0f64..6.0, g2 in 0.0f64..4.0) {
        let z = special::zeta(t, g2).unwrap();
        let zm = special::zeta(-t, g2).unwrap();
        let m = special::gauss_erf_moments(t, g2).unwrap();
        prop_assert!((z - zm).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&z));
        prop_assert!(m.e_erf * m.e_erf <= z + 1e-12);
    }

    #[test]
    fn zeta_increases_with_abs_t(t in 0.0f64..5.0, dt in 0.01f64..1.0, g2 in 0.0f64..4.0) {
        let a = special::zeta(t, g2).unwrap();
        let b = special::zeta(t + dt, g2).unwrap();
        prop_assert!(b >= a - 1e-13, "{} -> {}", a, b);
    }

    #[test]
    fn risk_invariant_under_global_sign_flip(seed in 0u64..10_000, lambda in 0.05f64..2.0) {
        let t = task(50, 5, lambda, 0.1);
        let c = coords_from_seed(seed);
        let flipped = OverlapCoords { kappa: -c.kappa, nu: -c.nu, theta: -c.theta, eta: -c.eta, rho: c.rho };
        let a = risk::risk_full(&c, &t).unwrap();
        let b = risk::risk_full(&flipped, &t).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn manifold_risk_even(kappa in -1.0f64..1.0, nu in -1.0f64..1.0) {
        let t = task(400, 10, 0.1, 0.0);
        let a = risk::risk_manifold(kappa, nu, &t).unwrap();
        let b = risk::risk_manifold(-kappa, -nu, &t).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn full_risk_specializes_to_manifold(kappa in -1.0f64..1.0, nu in -1.0f64..1.0, lambda in 0.05f64..2.0) {
        let t = task(50, 5, lambda, 0.1);
        let a = risk::risk_full(&OverlapCoords::on_manifold(kappa, nu), &t).unwrap();
        let b = risk::risk_manifold(kappa, nu, &t).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn risk_at_least_bayes_floor(seed in 0u64..10_000) {
        let t = task(50, 5, 0.3, 0.1);
        let r = risk::risk_full(&coords_from_seed(seed), &t).unwrap();
        prop_assert!(r >= risk::bayes_floor(&t));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences(seed in 0u64..10_000, lambda in 0.05f64..2.0) {
        let t = task(50, 5, lambda, 0.1);
        let m = RiskModel::new(&t, lambda).unwrap();
        let c = coords_from_seed(seed);
        let an = m.grad_full(&c, GradMode::Analytic).unwrap();
        let fd = m.grad_full(&c, GradMode::FiniteDifference).unwrap();
        prop_assert!(risk::grad_rel_error(&an.as_array(), &fd.as_array()) <= 1e-5);
    }

    #[test]
    fn realized_pairs_have_requested_overlaps(seed in 0u64..10_000) {
        let t = task(12, 3, 0.5, 0.0);
        let c = coords_from_seed(seed);
        let pair = montecarlo::realize_coords(&c, &t).unwrap();
        let back = OverlapCoords::from_vectors(&pair.k, &pair.v, &t);
        for (a, b) in c.as_array().iter().zip(back.as_array()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_weights_form_distribution(seed in 0u64..10_000, lambda in 0.0f64..50.0) {
        let t = task(20, 6, 1.0, 0.0);
        let mut r = rng::stream(seed, 1);
        let inst = t.sample_instance(&mut r);
        let k = linalg::random_unit(&mut r, 20);
        let w = predictor::softmax_weights(&k, lambda, &inst.x);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn erf_predictor_bounded_and_sign_symmetric(seed in 0u64..10_000, lambda in 0.0f64..5.0) {
        let t = task(20, 6, 1.0, 0.0);
        let mut r = rng::stream(seed, 2);
        let inst = t.sample_instance(&mut r);
        let pair = ParamPair { k: linalg::random_unit(&mut r, 20), v: linalg::random_unit(&mut r, 20) };
        let neg = ParamPair {
            k: pair.k.iter().map(|x| -x).collect(),
            v: pair.v.iter().map(|x| -x).collect(),
        };
        let p = predictor::predict_erf(&pair, lambda, &inst.x);
        let bound: f64 = inst.x.iter_rows().map(|row| linalg::dot(row, &pair.v).abs()).sum();
        prop_assert!(p.abs() <= bound + 1e-12);
        prop_assert_eq!(p, predictor::predict_erf(&neg, lambda, &inst.x));
    }

    #[test]
    fn reduced_map_stays_in_square(kappa in -1.0f64..1.0, nu in -1.0f64..1.0) {
        let t = task(400, 10, 0.1, 0.0);
        let (k, n) = optimizer::pgd_step_reduced(kappa, nu, 4e-3, 0.1, &t).unwrap();
        prop_assert!(k.abs() <= 1.0 && n.abs() <= 1.0);
    }

    #[test]
    fn uniform_linear_risk_matches_general_sum(l in 1usize..200, g2 in 0.01f64..4.0, eps in 0.0f64..1.0) {
        let t = task::make_task(4, l, g2.sqrt(), eps, 1.0, None, &mut rng::stream(6, rng::TASK_STREAM)).unwrap();
        let general = risk::linear_baseline(&t);
        let r = risk::linear_risk_uniform(l, t.gamma_sq(), eps);
        prop_assert!((r - general.risk).abs() <= 1e-12);
        prop_assert!(r >= eps * eps - 1e-15 && r <= eps * eps + t.gamma_sq() + 1e-15);
        prop_assert!(general.risk >= general.lower_bound - 1e-12);
    }
}
