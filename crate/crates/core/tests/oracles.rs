//! Independent oracles for the derived reference values: direct sampling,
//! finite differences and naive reimplementations.

use rand::Rng;
use rand_distr::StandardNormal;
use slr_core::linalg::{self, Matrix};
use slr_core::optimizer::{self, SphereState};
use slr_core::predictor::{self, AttentionParams, ParamPair};
use slr_core::risk::{self, OverlapCoords};
use slr_core::task::{self, TaskParams};
use slr_core::validate::{self, Level};
use slr_core::{par::Exec, rng, special};

const G: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn task(d: usize, l: usize, gamma: f64, eps: f64, lambda: f64, seed: u64) -> TaskParams {
    task::make_task(
        d,
        l,
        gamma,
        eps,
        lambda,
        None,
        &mut rng::stream(seed, rng::TASK_STREAM),
    )
    .unwrap()
}

/// Mean and standard error of `f(t + sqrt(g2) Z)` over `n` draws.
fn gauss_mc(t: f64, g2: f64, n: usize, seed: u64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut r = rng::stream(seed, 0);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let z: f64 = r.sample(StandardNormal);
        let y = f(t + g2.sqrt() * z);
        s += y;
        s2 += y * y;
    }
    let nf = n as f64;
    let m = s / nf;
    (m, ((s2 / nf - m * m) / nf).sqrt())
}

type Statistic = Box<dyn Fn(f64) -> f64>;

fn erf_prime(x: f64) -> f64 {
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp()
}

#[test]
fn gaussian_erf_moments_match_sampling() {
    let (t, g2) = (0.5, 0.5);
    let m = special::gauss_erf_moments(t, g2).unwrap();
    let erf = |x: f64| libm::erf(x);
    let checks: [(f64, Statistic); 5] = [
        (m.e_erf, Box::new(erf)),
        (m.e_derf, Box::new(erf_prime)),
        (m.e_dderf, Box::new(|x: f64| -2.0 * x * erf_prime(x))),
        (m.e_derf_sq, Box::new(|x: f64| erf_prime(x).powi(2))),
        (m.e_erf_derf, Box::new(move |x: f64| erf(x) * erf_prime(x))),
    ];
    for (i, (closed, f)) in checks.iter().enumerate() {
        let (mean, se) = gauss_mc(t, g2, 10_000_000, 10 + i as u64, f);
        assert!(
            (mean - closed).abs() <= 4.0 * se,
            "moment {i}: {closed} vs {mean} +- {se}"
        );
    }
}

#[test]
fn zeta_matches_sampling_at_zero() {
    let z = special::zeta(0.0, 0.25).unwrap();
    let (mean, se) = gauss_mc(0.0, 0.25, 10_000_000, 20, |x| libm::erf(x).powi(2));
    assert!((mean - z).abs() <= 4.0 * se, "{z} vs {mean} +- {se}");
}

#[test]
fn zeta_derivative_matches_finite_difference() {
    let h = 1e-5;
    let fd =
        (special::zeta(1.0 + h, 0.5).unwrap() - special::zeta(1.0 - h, 0.5).unwrap()) / (2.0 * h);
    let an = special::dzeta_dt(1.0, 0.5).unwrap();
    assert!((fd - an).abs() <= 1e-7, "{an} vs {fd}");
}

#[test]
fn erf_matches_independent_quadrature() {
    // composite Simpson on (2/sqrt(pi)) exp(-t^2) over [0, 1]
    let n = 20_000;
    let h = 1.0 / n as f64;
    let f = |t: f64| (-t * t).exp();
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    let simpson = 2.0 / std::f64::consts::PI.sqrt() * s * h / 3.0;
    assert!((special::erf(1.0) - simpson).abs() <= 1e-14);
}

#[test]
fn token_norms_match_model() {
    let t = task(100, 5, G, 0.0, 1.0, 1);
    let mut r = rng::stream(1, 0);
    let (mut noise, mut signal) = (0.0, 0.0);
    let n = 100_000;
    let mut inst = t.sample_instance(&mut r);
    for i in 0..n {
        if i > 0 {
            t.sample_into(&mut r, &mut inst);
        }
        for (l, row) in inst.x.iter_rows().enumerate() {
            let sq = linalg::dot(row, row);
            if l == inst.j0 {
                signal += sq;
            } else {
                noise += sq;
            }
        }
    }
    let noise = noise / (n * 4) as f64;
    let signal = signal / n as f64;
    assert!((noise / 100.0 - 1.0).abs() < 0.01, "{noise}");
    // d/2 + gamma^2 d
    assert!((signal / 100.0 - 1.0).abs() < 0.01, "{signal}");
}

#[test]
fn response_is_informative_token_projection() {
    let t = task(30, 4, 0.6, 0.0, 1.0, 2);
    let mut r = rng::stream(2, 0);
    let mut counts = [0usize; 4];
    for _ in 0..4000 {
        let inst = t.sample_instance(&mut r);
        assert!((inst.y - linalg::dot(inst.x.row(inst.j0), &t.v_star)).abs() < 1e-12);
        counts[inst.j0] += 1;
    }
    // uniform locations: each count ~ 1000 +- 27
    assert!(
        counts.iter().all(|&c| (880..=1120).contains(&c)),
        "{counts:?}"
    );
}

#[test]
fn oracle_matches_two_pass_argmax() {
    let t = task(50, 8, G, 0.2, 1.0, 3);
    let mut r = rng::stream(3, 0);
    for _ in 0..200 {
        let inst = t.sample_instance(&mut r);
        let scores: Vec<f64> = (0..8)
            .map(|l| linalg::dot(inst.x.row(l), &t.k_star))
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let j = scores.iter().position(|&s| s == max).unwrap();
        let naive = linalg::dot(inst.x.row(j), &t.v_star);
        assert_eq!(predictor::predict_oracle(&t, &inst.x), naive);
    }
}

#[test]
fn softmax_tends_to_oracle_at_large_lambda() {
    let t = task(50, 8, G, 0.0, 1.0, 4);
    let pair = ParamPair::oracle(&t);
    let mut r = rng::stream(4, 0);
    let mut checked = 0;
    while checked < 100 {
        let inst = t.sample_instance(&mut r);
        let mut s: Vec<f64> = inst
            .x
            .iter_rows()
            .map(|row| linalg::dot(row, &t.k_star))
            .collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if s[0] - s[1] < 1e-2 {
            continue;
        }
        let soft = predictor::predict_softmax(&pair, 1e4, &inst.x);
        assert!((soft - predictor::predict_oracle(&t, &inst.x)).abs() <= 1e-6);
        checked += 1;
    }
}

fn gaussian_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

#[test]
fn attention_rank_one_is_softmax_predictor() {
    let t = task(12, 5, G, 0.0, 1.0, 5);
    let mut r = rng::stream(5, 0);
    for _ in 0..20 {
        let x_cls: Vec<f64> = (0..12)
            .map(|_| 0.4 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let k = linalg::random_unit(&mut r, 12);
        let v = linalg::random_unit(&mut r, 12);
        let att = AttentionParams {
            q: Matrix::from_rows(12, 1, x_cls.clone()).unwrap(),
            k: Matrix::from_rows(12, 1, k.clone()).unwrap(),
            v: Matrix::from_rows(12, 1, v.clone()).unwrap(),
            o: Matrix::from_rows(1, 1, vec![1.0]).unwrap(),
            x_cls: x_cls.clone(),
        };
        let inst = t.sample_instance(&mut r);
        let lam = 0.3;
        let out = predictor::attention_cls_row(&att, lam, &inst.x).unwrap();
        let pair = ParamPair { k, v };
        let expect = predictor::predict_softmax(&pair, lam * linalg::dot(&x_cls, &x_cls), &inst.x);
        assert!((out[0] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn attention_matches_loop_evaluation() {
    let (d, l, p, o) = (8, 4, 3, 2);
    let mut r = rng::stream(6, 0);
    let att = AttentionParams {
        q: gaussian_matrix(&mut r, d, p),
        k: gaussian_matrix(&mut r, d, p),
        v: gaussian_matrix(&mut r, d, p),
        o: gaussian_matrix(&mut r, o, p),
        x_cls: (0..d).map(|_| r.sample(StandardNormal)).collect(),
    };
    let x = gaussian_matrix(&mut r, l, d);
    let lam = 0.2;
    let mut scores = vec![0.0; l];
    for (ll, s) in scores.iter_mut().enumerate() {
        for i in 0..d {
            for j in 0..p {
                for m in 0..d {
                    *s += att.x_cls[i] * att.q.get(i, j) * att.k.get(m, j) * x.get(ll, m);
                }
            }
        }
        *s *= lam;
    }
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let w: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    let mut expect = vec![0.0; o];
    for (rr, e) in expect.iter_mut().enumerate() {
        for ll in 0..l {
            for j in 0..p {
                for m in 0..d {
                    *e += w[ll] * x.get(ll, m) * att.v.get(m, j) * att.o.get(rr, j);
                }
            }
        }
    }
    let got = predictor::attention_cls_row(&att, lam, &x).unwrap();
    for (g, e) in got.iter().zip(&expect) {
        assert!((g - e).abs() <= 1e-12 * (1.0 + e.abs()), "{g} vs {e}");
    }
}

#[test]
fn pgd_step_matches_finite_difference_update() {
    let t = task(20, 4, G, 0.1, 0.7, 7);
    let mut r = rng::stream(7, 0);
    let lam = 0.7;
    let alpha = 0.05;
    let model = risk::RiskModel::new(&t, lam).unwrap();
    for _ in 0..5 {
        let s = optimizer::init_on_sphere(20, &mut r);
        let f = |k: &[f64], v: &[f64]| {
            model
                .risk_full(&OverlapCoords::from_vectors(k, v, &t))
                .unwrap()
        };
        let h = 1e-6;
        let fd = |which: usize, i: usize| {
            let (mut kp, mut vp) = (s.k.clone(), s.v.clone());
            let (mut km, mut vm) = (s.k.clone(), s.v.clone());
            if which == 0 {
                kp[i] += h;
                km[i] -= h;
            } else {
                vp[i] += h;
                vm[i] -= h;
            }
            (f(&kp, &vp) - f(&km, &vm)) / (2.0 * h)
        };
        let gk: Vec<f64> = (0..20).map(|i| fd(0, i)).collect();
        let gv: Vec<f64> = (0..20).map(|i| fd(1, i)).collect();
        let retract = |x: &[f64], g: &[f64]| {
            let xg = linalg::dot(x, g);
            let mut y: Vec<f64> = x
                .iter()
                .zip(g)
                .map(|(xi, gi)| xi - alpha * (gi - xg * xi))
                .collect();
            linalg::normalize(&mut y).unwrap();
            y
        };
        let expect = SphereState {
            k: retract(&s.k, &gk),
            v: retract(&s.v, &gv),
        };
        let got = optimizer::pgd_step_full(&s, alpha, lam, &t).unwrap();
        assert!(got.distance(&expect) <= 1e-7, "{}", got.distance(&expect));
    }
}

#[test]
fn oracle_risk_decreases_with_dimension() {
    let mut prev = f64::INFINITY;
    for d in [100usize, 10_000, 1_000_000] {
        let lam = (d as f64).powf(-0.4);
        let t = task(d, 10, G, 0.0, lam, 8);
        let r = risk::oracle_risk(&t).unwrap();
        assert!(r < prev && r > 0.0, "d={d}: {r}");
        prev = r;
    }
    assert!(prev < 1e-2);
}

#[test]
fn noisy_oracle_excess_is_small_and_positive() {
    let d = 6400usize;
    let t = task(d, 10, G, 0.1, (d as f64).powf(-0.4), 9);
    let excess = risk::risk_manifold(1.0, 1.0, &t).unwrap() - 0.01;
    assert!(excess > 0.0 && excess < 0.025, "{excess}");
}

#[test]
fn oracle_risk_expression_is_independent_route() {
    for (d, l, lam) in [(50, 5, 0.3), (400, 10, 0.1), (80, 3, 2.0)] {
        let t = task(d, l, G, 0.1, lam, 10);
        let a = risk::oracle_risk(&t).unwrap();
        let b = risk::oracle_risk_expression(&t).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn random_sphere_point_is_near_but_off_manifold() {
    let t = task(400, 10, G, 0.0, 0.1, 11);
    let mut r = rng::stream(11, 0);
    let mut acc = 0.0;
    for _ in 0..100 {
        let dm = optimizer::dist_manifold(&optimizer::init_on_sphere(400, &mut r), &t);
        assert!(dm > 0.0);
        acc += 400.0 * dm * dm;
    }
    // d * dist^2 is approximately chi-squared with 3 degrees of freedom
    let mean = acc / 100.0;
    assert!((2.2..=3.8).contains(&mean), "{mean}");
}

#[test]
fn large_batch_spgd_tracks_pgd() {
    let t = task(80, 10, G, 0.1, 2.0, 12);
    let init = optimizer::init_on_sphere(80, &mut rng::stream(12, 0));
    let sched = optimizer::Schedule::constant(2.0);
    let exact = optimizer::run_pgd(&init, &sched, 1e-3, 100, 10, &t).unwrap();
    let sto = optimizer::run_spgd(
        &init,
        &sched,
        1e-3,
        100,
        10_000,
        10,
        &t,
        &mut rng::stream(12, 1),
    )
    .unwrap();
    let moved = (exact.last().kappa - exact.rows[0].kappa).abs()
        + (exact.last().nu - exact.rows[0].nu).abs();
    assert!(moved > 0.05, "exact run barely moves: {moved}");
    for (a, b) in exact.rows.iter().zip(&sto.rows) {
        assert_eq!(a.step, b.step);
        assert!(
            (a.kappa - b.kappa).abs() <= 0.05 && (a.nu - b.nu).abs() <= 0.05,
            "step {}: {:?} vs {:?}",
            a.step,
            a,
            b
        );
    }
}

#[test]
fn monte_carlo_suite_catches_a_perturbed_formula() {
    let seed = 3;
    let good = validate::suite_risk_mc(Level::Fast, seed, Exec::default(), &|c, t| {
        risk::risk_full(c, t)
    });
    assert!(good.passed, "{}", good.detail);
    // evaluate the closed form at a 10% wrong temperature
    let bad = validate::suite_risk_mc(Level::Fast, seed, Exec::default(), &|c, t| {
        risk::risk_full(c, &t.with_lambda(1.1 * t.lambda0))
    });
    assert!(!bad.passed, "{}", bad.detail);
}
