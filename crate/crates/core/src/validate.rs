//! Oracle cross-checks run by `slr validate`. Each suite compares a closed
//! form against an independent route (Monte Carlo, finite differences, least
//! squares, or a second implementation) and reports the achieved error.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg;
use crate::montecarlo;
use crate::optimizer::{self, Schedule};
use crate::par::Exec;
use crate::predictor::{self, ParamPair};
use crate::risk::{self, GradMode, OverlapCoords, RiskModel};
use crate::rng;
use crate::special;
use crate::task::{self, Instance, TaskParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    /// Sample counts shrink by 100x at the fast level.
    fn scale(self, n: usize) -> usize {
        match self {
            Level::Fast => (n / 100).max(1),
            Level::Full => n,
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            _ => Err(format!("unknown level `{s}` (expected fast or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Signature of a risk formula under test, so a perturbed copy can be fed to
/// the Monte Carlo suite.
pub type RiskFn<'a> = dyn Fn(&OverlapCoords, &TaskParams) -> Result<f64> + Sync + 'a;

/// Task used by the risk cross-checks: d=50, L=5, gamma^2=1/2, lambda=0.3, eps=0.1.
pub fn mc_task(seed: u64) -> Result<TaskParams> {
    task::make_task(
        50,
        5,
        std::f64::consts::FRAC_1_SQRT_2,
        0.1,
        0.3,
        None,
        &mut rng::stream(seed, rng::TASK_STREAM),
    )
}

/// Moment identity and zeta properties over t in [-5, 5], gamma^2 in [0, 4].
pub fn suite_moments() -> SuiteResult {
    SuiteResult::from_result(
        "moment-identity",
        (|| {
            let mut max_id = 0.0f64;
            let mut ok = true;
            for i in 0..=40 {
                let t = -5.0 + 0.25 * i as f64;
                for j in 0..=16 {
                    let g2 = 0.25 * j as f64;
                    let m = special::gauss_erf_moments(t, g2)?;
                    let ee2 = special::gauss_erf_dderf_product(t, g2)?;
                    let lhs = (1.0 + 2.0 * g2) * ee2;
                    let rhs = -2.0 * t * m.e_erf_derf - 2.0 * g2 * m.e_derf_sq;
                    max_id = max_id.max((lhs - rhs).abs());
                    let z = special::zeta(t, g2)?;
                    let zm = special::zeta(-t, g2)?;
                    ok &= (0.0..=1.0).contains(&z) && (z - zm).abs() <= 1e-12;
                    ok &= m.e_erf * m.e_erf <= z + 1e-12;
                }
            }
            Ok((
                ok && max_id <= 1e-10,
                format!(
                    "max identity error {max_id:.2e}; zeta bounds/symmetry/Jensen {}",
                    if ok { "hold" } else { "violated" }
                ),
            ))
        })(),
    )
}

/// Closed-form risk vs Monte Carlo at 20 random coordinates.
pub fn suite_risk_mc(level: Level, seed: u64, exec: Exec, risk_fn: &RiskFn<'_>) -> SuiteResult {
    let n = level.scale(2_000_000);
    SuiteResult::from_result(
        "risk-vs-monte-carlo",
        (|| {
            let task = mc_task(seed)?;
            let mut r = rng::stream(seed, 1);
            let coords: Vec<OverlapCoords> =
                (0..20).map(|_| montecarlo::random_coords(&mut r)).collect();
            let pairs = coords
                .iter()
                .map(|c| montecarlo::realize_coords(c, &task))
                .collect::<Result<Vec<ParamPair>>>()?;
            let est = montecarlo::empirical_risks(
                &pairs,
                task.lambda0,
                &task,
                n,
                rng::derive_seed(seed, 2),
                exec,
            );
            let mut worst = 0.0f64;
            for (c, e) in coords.iter().zip(&est) {
                worst = worst.max(e.z_score(risk_fn(c, &task)?));
            }
            Ok((
                worst <= 4.0,
                format!("20 points, n={n}, worst |z| = {worst:.2} (limit 4)"),
            ))
        })(),
    )
}

/// Finite-difference checks of the manifold, full-coordinate, and stochastic
/// gradients.
pub fn suite_gradients(level: Level, seed: u64) -> SuiteResult {
    let points = match level {
        Level::Fast => 20,
        Level::Full => 100,
    };
    SuiteResult::from_result(
        "gradients",
        (|| {
            let task = mc_task(seed)?;
            let model = RiskModel::new(&task, task.lambda0)?;
            let mut r = rng::stream(seed, 3);
            let mut e_man = 0.0f64;
            for _ in 0..points {
                let k = r.gen_range(-0.99..0.99);
                let n = r.gen_range(-0.99..0.99);
                let h = 1e-6;
                let fd_k =
                    (model.risk_manifold(k + h, n)? - model.risk_manifold(k - h, n)?) / (2.0 * h);
                let fd_n =
                    (model.risk_manifold(k, n + h)? - model.risk_manifold(k, n - h)?) / (2.0 * h);
                let (dk, dn) = model.grad_manifold(k, n);
                e_man = e_man.max(risk::grad_rel_error(&[dk, dn], &[fd_k, fd_n]));
            }
            let mut e_full = 0.0f64;
            for _ in 0..points {
                let c = montecarlo::random_coords(&mut r);
                let an = model.grad_full(&c, GradMode::Analytic)?;
                let fd = model.grad_full(&c, GradMode::FiniteDifference)?;
                e_full = e_full.max(risk::grad_rel_error(&an.as_array(), &fd.as_array()));
            }
            let e_sto = stochastic_grad_error(&task, seed, points / 10 + 1)?;
            let ok = e_man <= 1e-6 && e_full <= 1e-5 && e_sto <= 1e-5;
            Ok((
            ok,
            format!("manifold {e_man:.2e} (1e-6), full {e_full:.2e} (1e-5), stochastic {e_sto:.2e} (1e-5)"),
        ))
        })(),
    )
}

/// Batch loss of the erf predictor at `(k, v)` (unnormalized vectors allowed).
pub fn batch_loss(k: &[f64], v: &[f64], lambda: f64, batch: &[Instance]) -> f64 {
    let pair = ParamPair {
        k: k.to_vec(),
        v: v.to_vec(),
    };
    batch
        .iter()
        .map(|inst| {
            let r = inst.y - predictor::predict_erf(&pair, lambda, &inst.x);
            r * r
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Worst relative error of `stochastic_grad` against central differences of
/// the batch loss along `2d` random directions, over `trials` batches.
pub fn stochastic_grad_error(task: &TaskParams, seed: u64, trials: usize) -> Result<f64> {
    let mut r = rng::stream(seed, 4);
    let d = task.d;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let s = optimizer::init_on_sphere(d, &mut r);
        let batch: Vec<Instance> = (0..4).map(|_| task.sample_instance(&mut r)).collect();
        let (gk, gv) = optimizer::stochastic_grad(&s, task.lambda0, &batch)?;
        let mut an = Vec::with_capacity(2 * d);
        let mut fd = Vec::with_capacity(2 * d);
        for _ in 0..2 * d {
            let dir_k = linalg::random_unit(&mut r, d);
            let dir_v = linalg::random_unit(&mut r, d);
            let h = 1e-6;
            let shift = |sign: f64| {
                let k: Vec<f64> =
                    s.k.iter()
                        .zip(&dir_k)
                        .map(|(a, b)| a + sign * h * b)
                        .collect();
                let v: Vec<f64> =
                    s.v.iter()
                        .zip(&dir_v)
                        .map(|(a, b)| a + sign * h * b)
                        .collect();
                batch_loss(&k, &v, task.lambda0, &batch)
            };
            fd.push((shift(1.0) - shift(-1.0)) / (2.0 * h));
            an.push(linalg::dot(&gk, &dir_k) + linalg::dot(&gv, &dir_v));
        }
        worst = worst.max(risk::grad_rel_error(&an, &fd));
    }
    Ok(worst)
}

/// Full-space PGD from a manifold point against the reduced map.
pub fn suite_reduced(level: Level, seed: u64) -> SuiteResult {
    let steps = match level {
        Level::Fast => 100,
        Level::Full => 1000,
    };
    SuiteResult::from_result(
        "reduced-vs-full",
        (|| {
            let task = task::make_task(
                400,
                10,
                std::f64::consts::FRAC_1_SQRT_2,
                0.0,
                0.1,
                None,
                &mut rng::stream(seed, rng::TASK_STREAM),
            )?;
            let err = reduced_full_gap(&task, seed, 4e-3, steps)?;
            Ok((
                err <= 1e-8,
                format!("{steps} steps, max |(kappa, nu)| gap {err:.2e} (1e-8)"),
            ))
        })(),
    )
}

/// Largest coordinate gap between full PGD and the reduced map over `steps`.
pub fn reduced_full_gap(task: &TaskParams, seed: u64, alpha: f64, steps: usize) -> Result<f64> {
    let init = optimizer::init_on_manifold(task, &mut rng::stream(seed, 5))?;
    let lambda = task.lambda0;
    let full = optimizer::run_pgd(&init, &Schedule::constant(lambda), alpha, steps, 1, task)?;
    let c0 = init.coords(task);
    let reduced = optimizer::run_reduced(c0.kappa, c0.nu, alpha, lambda, steps, task)?;
    Ok(full
        .rows
        .iter()
        .zip(&reduced)
        .map(|(row, &(k, n))| (row.kappa - k).abs().max((row.nu - n).abs()))
        .fold(0.0, f64::max))
}

/// Empirical least squares against the best-linear-predictor formula.
pub fn suite_linear(level: Level, seed: u64) -> SuiteResult {
    let n = level.scale(200_000);
    SuiteResult::from_result(
        "linear-baseline",
        (|| {
            let task = task::make_task(
                4,
                3,
                std::f64::consts::FRAC_1_SQRT_2,
                0.1,
                1.0,
                None,
                &mut rng::stream(seed, rng::TASK_STREAM),
            )?;
            let fit = least_squares(&task, n, rng::derive_seed(seed, 6))?;
            let lb = risk::linear_baseline(&task);
            let beta_star = linear_beta(&task, &lb.coeffs);
            let z_coef = fit
                .beta
                .iter()
                .zip(&fit.se)
                .zip(&beta_star)
                .map(|((b, s), t)| (b - t).abs() / s)
                .fold(0.0, f64::max);
            let z_risk = (fit.risk_at_star - lb.risk).abs() / fit.risk_at_star_se;
            Ok((
                z_coef <= 3.0 && z_risk <= 3.0,
                format!("n={n}, worst coefficient |z| {z_coef:.2}, risk |z| {z_risk:.2} (limit 3)"),
            ))
        })(),
    )
}

/// Flattened `beta* = (b_1 v*, ..., b_L v*)`.
pub fn linear_beta(task: &TaskParams, coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .flat_map(|&b| task.v_star.iter().map(move |&v| b * v))
        .collect()
}

pub struct LeastSquaresFit {
    pub beta: Vec<f64>,
    /// Heteroskedasticity-robust (sandwich) standard errors of `beta`.
    pub se: Vec<f64>,
    /// Mean squared error of `beta*` on the same sample, and its standard error.
    pub risk_at_star: f64,
    pub risk_at_star_se: f64,
}

/// Regress `y` on the flattened tokens by the normal equations.
pub fn least_squares(task: &TaskParams, n: usize, seed: u64) -> Result<LeastSquaresFit> {
    let p = task.d * task.seq_len;
    let mut r = rng::stream(seed, 0);
    let lb = risk::linear_baseline(task);
    let beta_star = linear_beta(task, &lb.coeffs);
    let mut xs = Vec::with_capacity(n * p);
    let mut ys = Vec::with_capacity(n);
    let mut inst = task.sample_instance(&mut r);
    for i in 0..n {
        if i > 0 {
            task.sample_into(&mut r, &mut inst);
        }
        xs.extend_from_slice(inst.x.as_slice());
        ys.push(inst.y);
    }
    let x = DMatrix::from_row_slice(n, p, &xs);
    let y = DVector::from_vec(ys);
    let xtx = x.transpose() * &x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| crate::error::invalid("least squares", "design matrix is singular"))?;
    let beta = chol.solve(&(x.transpose() * &y));
    let resid = &y - &x * &beta;
    // sandwich (X'X)^-1 X' diag(e^2) X (X'X)^-1
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for (i, e) in resid.iter().enumerate() {
        let row = x.row(i);
        meat += (row.transpose() * row) * (e * e);
    }
    let inv = chol.inverse();
    let cov = &inv * meat * &inv;
    let star = DVector::from_vec(beta_star);
    let sq: Vec<f64> = (&y - &x * &star).iter().map(|e| e * e).collect();
    let nf = n as f64;
    let mean = sq.iter().sum::<f64>() / nf;
    let var = sq.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (nf - 1.0);
    Ok(LeastSquaresFit {
        beta: beta.iter().copied().collect(),
        se: (0..p).map(|i| cov[(i, i)].sqrt()).collect(),
        risk_at_star: mean,
        risk_at_star_se: (var / nf).sqrt(),
    })
}

/// Gaussian-erf moments at t=0.5, gamma^2=0.5 against direct sampling.
pub fn suite_moments_mc(level: Level, seed: u64) -> SuiteResult {
    let n = level.scale(10_000_000);
    SuiteResult::from_result(
        "moments-vs-monte-carlo",
        (|| {
            let (t, g2) = (0.5, 0.5);
            let m = special::gauss_erf_moments(t, g2)?;
            let z = special::zeta(t, g2)?;
            let closed = [m.e_erf, m.e_derf, m.e_dderf, m.e_derf_sq, m.e_erf_derf, z];
            let mut r = rng::stream(seed, 7);
            let mut sum = [0.0; 6];
            let mut sum_sq = [0.0; 6];
            let g = g2.sqrt();
            for _ in 0..n {
                let x = t + g * r.sample::<f64, _>(StandardNormal);
                let (e, de) = (special::erf(x), special::derf(x));
                let vals = [e, de, special::dderf(x), de * de, e * de, e * e];
                for i in 0..6 {
                    sum[i] += vals[i];
                    sum_sq[i] += vals[i] * vals[i];
                }
            }
            let nf = n as f64;
            let mut worst = 0.0f64;
            for i in 0..6 {
                let mean = sum[i] / nf;
                let se = ((sum_sq[i] / nf - mean * mean).max(0.0) / nf).sqrt();
                worst = worst.max((mean - closed[i]).abs() / se);
            }
            Ok((
                worst <= 4.0,
                format!("n={n}, worst |z| = {worst:.2} (limit 4)"),
            ))
        })(),
    )
}

/// Descent and manifold invariance along a short on-manifold PGD run.
pub fn suite_descent(level: Level, seed: u64) -> SuiteResult {
    let steps = match level {
        Level::Fast => 500,
        Level::Full => 10_000,
    };
    SuiteResult::from_result(
        "descent-and-invariance",
        (|| {
            let task = task::make_task(
                400,
                10,
                std::f64::consts::FRAC_1_SQRT_2,
                0.0,
                0.1,
                None,
                &mut rng::stream(seed, rng::TASK_STREAM),
            )?;
            let init = optimizer::init_on_manifold(&task, &mut rng::stream(seed, 8))?;
            let tr = optimizer::run_pgd(&init, &Schedule::constant(0.1), 4e-3, steps, 1, &task)?;
            let max_rise = tr
                .rows
                .windows(2)
                .map(|w| w[1].risk - w[0].risk)
                .fold(f64::MIN, f64::max);
            let max_dist = tr.rows.iter().map(|r| r.dist_m).fold(0.0, f64::max);
            Ok((
            max_rise <= 1e-12 && max_dist <= 1e-8,
            format!("{steps} steps, max risk increase {max_rise:.2e} (1e-12), max dist_m {max_dist:.2e} (1e-8)"),
        ))
        })(),
    )
}

/// Run every suite at `level`.
pub fn run_all(level: Level, seed: u64, exec: Exec) -> Vec<SuiteResult> {
    vec![
        suite_moments(),
        suite_moments_mc(level, seed),
        suite_risk_mc(level, seed, exec, &|c, t| risk::risk_full(c, t)),
        suite_gradients(level, seed),
        suite_reduced(level, seed),
        suite_linear(level, seed),
        suite_descent(level, seed),
    ]
}
