//! Projected Riemannian gradient descent on `(S^{d-1})^2`: exact-gradient PGD
//! in ambient space, the reduced map on the invariant manifold, and
//! stochastic PGD on minibatches.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::risk::{GradMode, OverlapCoords, RiskModel};
use crate::special;
use crate::task::{Instance, TaskParams};

const UNIT_TOL: f64 = 1e-10;
/// Overlaps may exceed 1 by rounding; beyond this they are reported.
const DRIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SphereState {
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl SphereState {
    pub fn new(k: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if k.len() != v.len() {
            return Err(Error::Shape(format!(
                "k has length {}, v has {}",
                k.len(),
                v.len()
            )));
        }
        for (name, x) in [("k", &k), ("v", &v)] {
            let n = linalg::norm(x);
            if !((n - 1.0).abs() <= UNIT_TOL) {
                return Err(invalid(name, format!("norm {n} is not 1")));
            }
        }
        Ok(Self { k, v })
    }

    pub fn oracle(task: &TaskParams) -> Self {
        Self {
            k: task.k_star.clone(),
            v: task.v_star.clone(),
        }
    }

    pub fn coords(&self, task: &TaskParams) -> OverlapCoords {
        OverlapCoords::from_vectors(&self.k, &self.v, task)
    }

    fn is_finite(&self) -> bool {
        self.k.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Euclidean distance between two states viewed as points of R^{2d}.
    pub fn distance(&self, other: &SphereState) -> f64 {
        let dk: f64 = self
            .k
            .iter()
            .zip(&other.k)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dv: f64 = self
            .v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (dk + dv).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Hyperbolic,
}

/// Inverse temperature `lambda_t = lambda0 / (1 + decay t)`; `decay` is
/// ignored for a constant schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub lambda0: f64,
    pub decay: f64,
}

impl Schedule {
    pub fn constant(lambda0: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            lambda0,
            decay: 0.0,
        }
    }

    pub fn hyperbolic(lambda0: f64, decay: f64) -> Self {
        Self {
            kind: ScheduleKind::Hyperbolic,
            lambda0,
            decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(invalid(
                "lambda0",
                format!("must be > 0, got {}", self.lambda0),
            ));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(invalid(
                "decay",
                format!("must be >= 0, got {}", self.decay),
            ));
        }
        Ok(())
    }

    pub fn lambda_at(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.lambda0,
            ScheduleKind::Hyperbolic => self.lambda0 / (1.0 + self.decay * t as f64),
        }
    }

    fn is_constant(&self) -> bool {
        self.kind == ScheduleKind::Constant || self.decay == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub nu: f64,
    pub theta: f64,
    pub eta: f64,
    pub rho: f64,
    pub risk: f64,
    pub excess_risk: f64,
    pub dist_m: f64,
}

impl TrajectoryRow {
    pub const HEADER: [&'static str; 10] = [
        "step",
        "lambda",
        "kappa",
        "nu",
        "theta",
        "eta",
        "rho",
        "risk",
        "excess_risk",
        "dist_m",
    ];

    /// Values in `HEADER` order, step as f64.
    pub fn values(&self) -> [f64; 10] {
        [
            self.step as f64,
            self.lambda,
            self.kappa,
            self.nu,
            self.theta,
            self.eta,
            self.rho,
            self.risk,
            self.excess_risk,
            self.dist_m,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub final_state: SphereState,
    /// `||s_T - s_{T-1}||` for the last update.
    pub last_gap: f64,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryRow {
        self.rows.last().expect("trajectory has at least one row")
    }

    /// First recorded step with `|value| >= threshold`.
    pub fn first_reaching(
        &self,
        threshold: f64,
        field: impl Fn(&TrajectoryRow) -> f64,
    ) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| field(r).abs() >= threshold)
            .map(|r| r.step)
    }
}

pub fn dist_manifold(s: &SphereState, task: &TaskParams) -> f64 {
    let a = linalg::dot(&s.k, &task.v_star);
    let b = linalg::dot(&s.v, &task.k_star);
    let c = linalg::dot(&s.k, &s.v);
    (a * a + b * b + c * c).sqrt()
}

/// Overlaps with the rounding excess of `kappa`, `nu` clamped away, after
/// checking it is only rounding.
fn clamped_coords(s: &SphereState, task: &TaskParams, step: usize) -> Result<OverlapCoords> {
    let mut c = s.coords(task);
    for (name, x) in [("kappa", &mut c.kappa), ("nu", &mut c.nu)] {
        if x.abs() > 1.0 + DRIFT_TOL {
            return Err(Error::OverlapDrift {
                step,
                name,
                value: *x,
            });
        }
        *x = x.clamp(-1.0, 1.0);
    }
    Ok(c)
}

fn record(
    s: &SphereState,
    model: &RiskModel,
    task: &TaskParams,
    step: usize,
) -> Result<TrajectoryRow> {
    let c = clamped_coords(s, task, step)?;
    let risk = model.risk_full(&c)?;
    Ok(TrajectoryRow {
        step,
        lambda: model.lambda(),
        kappa: c.kappa,
        nu: c.nu,
        theta: c.theta,
        eta: c.eta,
        rho: c.rho,
        risk,
        excess_risk: risk - task.eps * task.eps,
        dist_m: dist_manifold(s, task),
    })
}

/// `x <- normalize(x - alpha (g - (x.g) x))`
fn retract(x: &[f64], g: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let xg = linalg::dot(x, g);
    let mut out: Vec<f64> = x
        .iter()
        .zip(g)
        .map(|(xi, gi)| xi - alpha * (gi - xg * xi))
        .collect();
    linalg::normalize(&mut out)?;
    Ok(out)
}

/// Apply one projected step given ambient gradients.
fn apply(s: &SphereState, gk: &[f64], gv: &[f64], alpha: f64, step: usize) -> Result<SphereState> {
    let next = SphereState {
        k: retract(&s.k, gk, alpha)?,
        v: retract(&s.v, gv, alpha)?,
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState { step });
    }
    Ok(next)
}

/// Ambient gradients of the population risk by the chain rule through the
/// five overlaps.
pub fn ambient_grad(
    s: &SphereState,
    model: &RiskModel,
    task: &TaskParams,
    step: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = clamped_coords(s, task, step)?;
    let g = model.grad_full(&c, GradMode::Analytic)?;
    Ok(ambient_from_partials(s, task, g.as_array()))
}

/// `grad_k = d_kappa k* + d_eta v* + d_rho v`, `grad_v = d_nu v* + d_theta k* + d_rho k`.
pub fn ambient_from_partials(
    s: &SphereState,
    task: &TaskParams,
    g: [f64; 5],
) -> (Vec<f64>, Vec<f64>) {
    let [dk, dn, dth, de, dr] = g;
    let d = s.k.len();
    let mut gk = vec![0.0; d];
    let mut gv = vec![0.0; d];
    for i in 0..d {
        gk[i] = dk * task.k_star[i] + de * task.v_star[i] + dr * s.v[i];
        gv[i] = dn * task.v_star[i] + dth * task.k_star[i] + dr * s.k[i];
    }
    (gk, gv)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    Ok(())
}

/// One exact PGD step at inverse temperature `lambda`.
pub fn pgd_step_full(
    s: &SphereState,
    alpha: f64,
    lambda: f64,
    task: &TaskParams,
) -> Result<SphereState> {
    check_alpha(alpha)?;
    let model = RiskModel::new(task, lambda)?;
    let (gk, gv) = ambient_grad(s, &model, task, 0)?;
    apply(s, &gk, &gv, alpha, 1)
}

/// The PGD map restricted to the invariant manifold, in `(kappa, nu)`.
pub fn pgd_step_reduced(
    kappa: f64,
    nu: f64,
    alpha: f64,
    lambda: f64,
    task: &TaskParams,
) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let model = RiskModel::new(task, lambda)?;
    Ok(reduced_step(&model, kappa, nu, alpha))
}

fn reduced_step(model: &RiskModel, kappa: f64, nu: f64, alpha: f64) -> (f64, f64) {
    let (dk, dn) = model.grad_manifold(kappa, nu);
    let map = |x: f64, g: f64| {
        let s = 1.0 - x * x;
        (x - alpha * g * s) / (1.0 + alpha * alpha * g * g * s).sqrt()
    };
    (map(kappa, dk), map(nu, dn))
}

/// Iterate the reduced map `steps` times at constant `lambda`.
pub fn run_reduced(
    kappa: f64,
    nu: f64,
    alpha: f64,
    lambda: f64,
    steps: usize,
    task: &TaskParams,
) -> Result<Vec<(f64, f64)>> {
    check_alpha(alpha)?;
    let model = RiskModel::new(task, lambda)?;
    let mut out = Vec::with_capacity(steps + 1);
    let mut p = (kappa, nu);
    out.push(p);
    for _ in 0..steps {
        p = reduced_step(&model, p.0, p.1, alpha);
        out.push(p);
    }
    Ok(out)
}

/// Caches the risk model while the schedule keeps lambda fixed.
struct ModelCache<'a> {
    task: &'a TaskParams,
    schedule: Schedule,
    model: RiskModel,
}

impl<'a> ModelCache<'a> {
    fn new(task: &'a TaskParams, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            task,
            schedule,
            model: RiskModel::new(task, schedule.lambda_at(0))?,
        })
    }

    fn at(&mut self, t: usize) -> Result<&RiskModel> {
        if !self.schedule.is_constant() {
            self.model = RiskModel::new(self.task, self.schedule.lambda_at(t))?;
        }
        Ok(&self.model)
    }
}

fn check_run_args(steps: usize, record_every: usize) -> Result<()> {
    if steps < 1 {
        return Err(invalid("steps", "must be >= 1"));
    }
    if record_every < 1 {
        return Err(invalid("record_every", "must be >= 1"));
    }
    Ok(())
}

fn should_record(t: usize, steps: usize, record_every: usize) -> bool {
    t.is_multiple_of(record_every) || t == steps
}

/// Exact-gradient PGD. Row `t` holds the state after `t` updates, with the
/// risk evaluated at `lambda_t`; step 0, every `record_every`-th step, and the
/// final step are recorded.
pub fn run_pgd(
    init: &SphereState,
    schedule: &Schedule,
    alpha: f64,
    steps: usize,
    record_every: usize,
    task: &TaskParams,
) -> Result<Trajectory> {
    check_alpha(alpha)?;
    check_run_args(steps, record_every)?;
    let mut cache = ModelCache::new(task, *schedule)?;
    let mut s = init.clone();
    let mut rows = Vec::with_capacity(steps / record_every + 2);
    let mut gap = 0.0;
    for t in 0..=steps {
        let model = cache.at(t)?;
        if should_record(t, steps, record_every) {
            rows.push(record(&s, model, task, t)?);
        }
        if t == steps {
            break;
        }
        let (gk, gv) = ambient_grad(&s, model, task, t)?;
        let next = apply(&s, &gk, &gv, alpha, t + 1)?;
        gap = next.distance(&s);
        s = next;
    }
    Ok(Trajectory {
        rows,
        final_state: s,
        last_gap: gap,
    })
}

pub fn init_on_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SphereState {
    let k = linalg::random_unit(rng, d);
    let v = linalg::random_unit(rng, d);
    SphereState { k, v }
}

/// Random point of the invariant manifold: `k` orthogonal to `v*`, `v`
/// orthogonal to both `k*` and `k`.
pub fn init_on_manifold<R: Rng + ?Sized>(task: &TaskParams, rng: &mut R) -> Result<SphereState> {
    if task.d < 3 {
        return Err(invalid(
            "d",
            "a point of the invariant manifold needs d >= 3",
        ));
    }
    let k = linalg::random_unit_orthogonal(rng, task.d, &[&task.v_star]);
    // orthonormal basis of span(k*, k)
    let mut k_perp = k.clone();
    linalg::project_out(&mut k_perp, &[&task.k_star]);
    linalg::project_out(&mut k_perp, &[&task.k_star]);
    let v = if linalg::normalize(&mut k_perp).is_ok() {
        linalg::random_unit_orthogonal(rng, task.d, &[&task.k_star, &k_perp])
    } else {
        linalg::random_unit_orthogonal(rng, task.d, &[&task.k_star])
    };
    Ok(SphereState { k, v })
}

/// Gradient of the minibatch loss `mean_i (y_i - T(X_i))^2` in `(k, v)`.
pub fn stochastic_grad(
    s: &SphereState,
    lambda: f64,
    batch: &[Instance],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(invalid("batch", "must be non-empty"));
    }
    let d = s.k.len();
    let mut gk = vec![0.0; d];
    let mut gv = vec![0.0; d];
    let mut erfs = Vec::new();
    let mut derfs = Vec::new();
    let mut vals = Vec::new();
    for inst in batch {
        if inst.x.cols() != d {
            return Err(Error::Shape(format!(
                "instance has d = {}, state {d}",
                inst.x.cols()
            )));
        }
        erfs.clear();
        derfs.clear();
        vals.clear();
        let mut pred = 0.0;
        for row in inst.x.iter_rows() {
            let z = lambda * linalg::dot(row, &s.k);
            let c = linalg::dot(row, &s.v);
            let e = special::erf(z);
            pred += e * c;
            erfs.push(e);
            derfs.push(special::derf(z));
            vals.push(c);
        }
        let r = inst.y - pred;
        for (l, row) in inst.x.iter_rows().enumerate() {
            linalg::axpy(-2.0 * r * erfs[l], row, &mut gv);
            linalg::axpy(-2.0 * r * lambda * derfs[l] * vals[l], row, &mut gk);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    linalg::scale(inv, &mut gk);
    linalg::scale(inv, &mut gv);
    Ok((gk, gv))
}

/// PGD on fresh minibatches. The recorded risk is the exact population risk
/// at the current state.
#[allow(clippy::too_many_arguments)]
pub fn run_spgd<R: Rng + ?Sized>(
    init: &SphereState,
    schedule: &Schedule,
    alpha: f64,
    steps: usize,
    batch_size: usize,
    record_every: usize,
    task: &TaskParams,
    rng: &mut R,
) -> Result<Trajectory> {
    check_alpha(alpha)?;
    check_run_args(steps, record_every)?;
    if batch_size < 1 {
        return Err(invalid("batch_size", "must be >= 1"));
    }
    let mut cache = ModelCache::new(task, *schedule)?;
    let mut batch: Vec<Instance> = (0..batch_size).map(|_| task.sample_instance(rng)).collect();
    let mut s = init.clone();
    let mut rows = Vec::with_capacity(steps / record_every + 2);
    let mut gap = 0.0;
    for t in 0..=steps {
        if should_record(t, steps, record_every) {
            let model = cache.at(t)?;
            rows.push(record(&s, model, task, t)?);
        }
        if t == steps {
            break;
        }
        if t > 0 {
            for inst in batch.iter_mut() {
                task.sample_into(rng, inst);
            }
        }
        let (gk, gv) = stochastic_grad(&s, schedule.lambda_at(t), &batch)?;
        let next = apply(&s, &gk, &gv, alpha, t + 1)?;
        gap = next.distance(&s);
        s = next;
    }
    Ok(Trajectory {
        rows,
        final_state: s,
        last_gap: gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::task::make_task;

    fn task() -> TaskParams {
        make_task(
            20,
            4,
            0.5f64.sqrt(),
            0.0,
            0.3,
            None,
            &mut rng::stream(8, rng::TASK_STREAM),
        )
        .unwrap()
    }

    #[test]
    fn oracle_is_fixed_point() {
        let t = task();
        let s = SphereState::oracle(&t);
        let next = pgd_step_full(&s, 4e-3, 0.3, &t).unwrap();
        assert!(next.distance(&s) < 1e-15);
    }

    #[test]
    fn reduced_map_fixed_points() {
        let t = task();
        assert_eq!(
            pgd_step_reduced(0.0, 0.0, 4e-3, 0.3, &t).unwrap(),
            (0.0, 0.0)
        );
        for (k, n) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
            assert_eq!(pgd_step_reduced(k, n, 4e-3, 0.3, &t).unwrap(), (k, n));
        }
    }

    #[test]
    fn manifold_init_satisfies_constraints() {
        let t = task();
        let s = init_on_manifold(&t, &mut rng::stream(1, 0)).unwrap();
        assert!(dist_manifold(&s, &t) <= 2e-12);
        assert!(dist_manifold(&SphereState::oracle(&t), &t) <= 1e-12);
        let s2 = init_on_manifold(&t, &mut rng::stream(2, 0)).unwrap();
        assert_ne!(s, s2);
    }

    #[test]
    fn swapped_directions_distance() {
        let t = task();
        let s = SphereState {
            k: t.v_star.clone(),
            v: t.k_star.clone(),
        };
        assert!((dist_manifold(&s, &t) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn schedule_values() {
        let s = Schedule::hyperbolic(2.0, 1e-4);
        assert_eq!(s.lambda_at(0), 2.0);
        assert!((s.lambda_at(10_000) - 1.0).abs() < 1e-15);
        assert_eq!(Schedule::constant(0.1).lambda_at(123), 0.1);
        assert!(Schedule::constant(-1.0).validate().is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let t = task();
        let s = init_on_sphere(t.d, &mut rng::stream(3, 0));
        let mut inst = t.sample_instance(&mut rng::stream(3, 1));
        inst.y = crate::predictor::predict_erf(
            &crate::predictor::ParamPair {
                k: s.k.clone(),
                v: s.v.clone(),
            },
            0.3,
            &inst.x,
        );
        let (gk, gv) = stochastic_grad(&s, 0.3, &[inst]).unwrap();
        assert!(gk.iter().chain(&gv).all(|&x| x == 0.0));
    }

    #[test]
    fn run_records_first_every_and_last() {
        let t = task();
        let s = init_on_sphere(t.d, &mut rng::stream(4, 0));
        let tr = run_pgd(&s, &Schedule::constant(0.3), 4e-3, 25, 10, &t).unwrap();
        let steps: Vec<usize> = tr.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert!(run_pgd(&s, &Schedule::constant(0.3), 4e-3, 0, 10, &t).is_err());
    }
}
