//! Closed-form population risk of the erf predictor in the five overlap
//! coordinates, its restriction to the invariant manifold, gradients, and the
//! linear baseline.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg;
use crate::special::{self, ddderf, dderf, derf, erf};
use crate::task::TaskParams;

/// Slack allowed on the correlation-matrix determinant and on |coord| <= 1.
const COORD_TOL: f64 = 1e-10;
/// Floor on the denominator of the relative gradient error.
const GRAD_REL_FLOOR: f64 = 1e-8;
/// Default tolerance of the analytic/finite-difference agreement check.
pub const GRAD_CHECK_TOL: f64 = 1e-5;

/// Overlaps of `(k, v)` with the task directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapCoords {
    /// k.k*
    pub kappa: f64,
    /// v.v*
    pub nu: f64,
    /// v.k*
    pub theta: f64,
    /// k.v*
    pub eta: f64,
    /// k.v
    pub rho: f64,
}

impl OverlapCoords {
    pub fn new(kappa: f64, nu: f64, theta: f64, eta: f64, rho: f64) -> Result<Self> {
        let c = Self {
            kappa,
            nu,
            theta,
            eta,
            rho,
        };
        c.validate()?;
        Ok(c)
    }

    /// Point of the invariant manifold (theta = eta = rho = 0).
    pub fn on_manifold(kappa: f64, nu: f64) -> Self {
        Self {
            kappa,
            nu,
            theta: 0.0,
            eta: 0.0,
            rho: 0.0,
        }
    }

    pub fn from_vectors(k: &[f64], v: &[f64], task: &TaskParams) -> Self {
        Self {
            kappa: linalg::dot(k, &task.k_star),
            nu: linalg::dot(v, &task.v_star),
            theta: linalg::dot(v, &task.k_star),
            eta: linalg::dot(k, &task.v_star),
            rho: linalg::dot(k, v),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.kappa, self.nu, self.theta, self.eta, self.rho]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            kappa: a[0],
            nu: a[1],
            theta: a[2],
            eta: a[3],
            rho: a[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["kappa", "nu", "theta", "eta", "rho"];
        for (name, x) in names.iter().zip(self.as_array()) {
            if !x.is_finite() {
                return Err(Error::InvalidCoords(format!("{name} is not finite")));
            }
            if x.abs() > 1.0 + COORD_TOL {
                return Err(Error::InvalidCoords(format!("|{name}| = {} > 1", x.abs())));
            }
        }
        // [[1, nu, eta], [nu, 1, rho], [eta, rho, 1]] must be PSD; with a unit
        // diagonal and off-diagonals in [-1, 1] that reduces to det >= 0.
        let (n, e, r) = (self.nu, self.eta, self.rho);
        let det = 1.0 + 2.0 * n * e * r - n * n - e * e - r * r;
        if det < -COORD_TOL {
            return Err(Error::InvalidCoords(format!(
                "correlation matrix not PSD (det = {det:e})"
            )));
        }
        Ok(())
    }
}

/// Partial derivatives of the risk in the five coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullGrad {
    pub kappa: f64,
    pub nu: f64,
    pub theta: f64,
    pub eta: f64,
    pub rho: f64,
}

impl FullGrad {
    pub fn as_array(&self) -> [f64; 5] {
        [self.kappa, self.nu, self.theta, self.eta, self.rho]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            kappa: a[0],
            nu: a[1],
            theta: a[2],
            eta: a[3],
            rho: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Analytic,
    FiniteDifference,
}

/// Constants of the risk for one task at inverse temperature `lambda`.
#[derive(Debug, Clone)]
pub struct RiskModel {
    d: f64,
    lm1: f64,
    lm2: f64,
    g2: f64,
    eps2: f64,
    lambda: f64,
    /// lambda^2 gamma^2, the variance parameter of the informative zeta
    lg2: f64,
    s1: f64,
    r1: f64,
    r12: f64,
    /// lambda sqrt(d/2)
    a: f64,
    /// lambda sqrt(d) / sqrt(1 + 4 lambda^2 gamma^2)
    zc: f64,
    half_d_sqrt: f64,
    k5: f64,
    c6: f64,
    c7: f64,
    c8: f64,
    c9: f64,
}

/// erf-family values at the three arguments the risk uses.
struct Args {
    t: f64,
    eu: f64,
    du: f64,
    ddu: f64,
    ew: f64,
    dw: f64,
    z: f64,
}

impl RiskModel {
    pub fn new(task: &TaskParams, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(crate::error::invalid(
                "lambda",
                format!("must be > 0, got {lambda}"),
            ));
        }
        let d = task.d as f64;
        let l = task.seq_len as f64;
        let g2 = task.gamma_sq();
        let l2 = lambda * lambda;
        let s1 = 1.0 + 2.0 * l2 * g2;
        let s2 = 1.0 + 4.0 * l2 * g2;
        let q1 = 1.0 + 2.0 * l2;
        let q2 = 1.0 + 4.0 * l2;
        let r1 = s1.sqrt();
        let a = lambda * (d / 2.0).sqrt();
        Ok(Self {
            d,
            lm1: l - 1.0,
            lm2: l - 2.0,
            g2,
            eps2: task.eps * task.eps,
            lambda,
            lg2: l2 * g2,
            s1,
            r1,
            r12: (s1 * s2).sqrt(),
            a,
            zc: lambda * d.sqrt() / s2.sqrt(),
            half_d_sqrt: (d / 2.0).sqrt(),
            k5: 4.0 * a * g2 / r1,
            c6: 4.0 * l2 * g2 * g2 / (PI.sqrt() * s2.sqrt() * s1),
            c7: 8.0 * l2 / (PI * q2.sqrt() * q1),
            c8: 4.0 * l2 / (q1 * PI),
            c9: 4.0 * lambda * (l - 1.0) / (q1 * PI).sqrt(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn args(&self, kappa: f64) -> Args {
        let t = self.a * kappa;
        let u = t / self.r1;
        let w = t / self.r12;
        let du = derf(u);
        Args {
            t,
            eu: erf(u),
            du,
            ddu: -2.0 * u * du,
            ew: erf(w),
            dw: derf(w),
            z: self.zc * kappa,
        }
    }

    /// zeta(0, lambda^2), the per-distractor risk.
    fn zeta_distractor(&self) -> Result<f64> {
        special::zeta(0.0, self.lambda * self.lambda)
    }

    /// Full risk, validating `c` first.
    pub fn risk_full(&self, c: &OverlapCoords) -> Result<f64> {
        c.validate()?;
        self.risk_full_unchecked(c)
    }

    fn risk_full_unchecked(&self, c: &OverlapCoords) -> Result<f64> {
        let OverlapCoords {
            kappa,
            nu,
            theta,
            eta,
            rho,
        } = *c;
        let g2 = self.g2;
        let e = self.args(kappa);
        let zeta_inf = special::zeta(e.t, self.lg2)?;
        let zeta0 = self.zeta_distractor()?;
        let p5 = theta * rho - self.lg2 * rho * rho * kappa / self.s1;

        let t1 = -2.0 * g2 * nu * e.eu;
        let t2 = -2.0 * self.a * g2 * eta * theta / self.r1 * e.du;
        let t3 = -2.0 * self.lg2 * g2 * eta * rho / self.s1 * e.ddu;
        let t4 = (self.d * theta * theta / 2.0 + g2) * zeta_inf;
        let t5 = self.k5 * p5 * e.ew * e.du;
        let t6 = self.c6 * rho * rho * derf(e.z);
        let t7 = self.lm1 * (zeta0 + self.c7 * rho * rho);
        let t8 = self.c8 * self.lm1 * self.lm2 * rho * rho;
        let t9 = self.c9
            * rho
            * (self.half_d_sqrt * theta * e.eu + self.lambda * g2 * rho / self.r1 * e.du);
        let r = self.eps2 + g2 + t1 + t2 + t3 + t4 + t5 + t6 + t7 + t8 + t9;
        if !r.is_finite() {
            return Err(Error::NonFinite("risk"));
        }
        Ok(r)
    }

    /// Risk on the invariant manifold.
    pub fn risk_manifold(&self, kappa: f64, nu: f64) -> Result<f64> {
        for (name, x) in [("kappa", kappa), ("nu", nu)] {
            if !(x.abs() <= 1.0 + COORD_TOL) {
                return Err(Error::InvalidCoords(format!("|{name}| = {} > 1", x.abs())));
            }
        }
        let e = self.args(kappa);
        let g2 = self.g2;
        Ok(g2 - 2.0 * g2 * nu * e.eu
            + g2 * special::zeta(e.t, self.lg2)?
            + self.lm1 * self.zeta_distractor()?
            + self.eps2)
    }

    /// `(d/dkappa, d/dnu)` of the manifold risk.
    pub fn grad_manifold(&self, kappa: f64, nu: f64) -> (f64, f64) {
        let e = self.args(kappa);
        let dk = -2.0 * self.g2 * self.a / self.r1 * e.du * (nu - e.ew);
        let dn = -2.0 * self.g2 * e.eu;
        (dk, dn)
    }

    pub fn grad_full(&self, c: &OverlapCoords, mode: GradMode) -> Result<FullGrad> {
        c.validate()?;
        match mode {
            GradMode::Analytic => self.grad_analytic(c),
            GradMode::FiniteDifference => self.grad_fd(c),
        }
    }

    /// Analytic gradient, cross-checked against finite differences.
    pub fn grad_full_checked(&self, c: &OverlapCoords, tol: f64) -> Result<(FullGrad, f64)> {
        let an = self.grad_full(c, GradMode::Analytic)?;
        let fd = self.grad_full(c, GradMode::FiniteDifference)?;
        let err = grad_rel_error(&an.as_array(), &fd.as_array());
        if !(err <= tol) {
            return Err(Error::GradientCheck { rel_err: err, tol });
        }
        Ok((an, err))
    }

    fn grad_analytic(&self, c: &OverlapCoords) -> Result<FullGrad> {
        let OverlapCoords {
            kappa,
            nu,
            theta,
            eta,
            rho,
        } = *c;
        let g2 = self.g2;
        let e = self.args(kappa);
        let u = e.t / self.r1;
        let dddu = ddderf(u);
        let du_dk = self.a / self.r1;
        let dw_dk = self.a / self.r12;
        let prod = e.ew * e.du;
        let p5 = theta * rho - self.lg2 * rho * rho * kappa / self.s1;
        let b2 = -2.0 * self.a * g2 / self.r1; // T2 = b2 * eta * theta * erf'(u)
        let b3 = -2.0 * self.lg2 * g2 / self.s1; // T3 = b3 * eta * rho * erf''(u)
        let lin4 = self.d * theta * theta / 2.0 + g2;
        let b9 = self.lambda * g2 / self.r1;

        let dkappa = -2.0 * g2 * nu * e.du * du_dk
            + b2 * eta * theta * e.ddu * du_dk
            + b3 * eta * rho * dddu * du_dk
            + lin4 * special::dzeta_dt(e.t, self.lg2)? * self.a
            + self.k5
                * (-self.lg2 * rho * rho / self.s1 * prod
                    + p5 * (e.dw * dw_dk * e.du + e.ew * e.ddu * du_dk))
            + self.c6 * rho * rho * dderf(e.z) * self.zc
            + self.c9 * rho * (self.half_d_sqrt * theta * e.du + b9 * rho * e.ddu) * du_dk;

        let dnu = -2.0 * g2 * e.eu;

        // zeta only enters the theta-partial through d theta^2 / 2
        let zeta_term = if theta != 0.0 {
            self.d * theta * special::zeta(e.t, self.lg2)?
        } else {
            0.0
        };
        let dtheta = b2 * eta * e.du
            + zeta_term
            + self.k5 * rho * prod
            + self.c9 * rho * self.half_d_sqrt * e.eu;

        let deta = b2 * theta * e.du + b3 * rho * e.ddu;

        let drho = b3 * eta * e.ddu
            + self.k5 * (theta - 2.0 * self.lg2 * rho * kappa / self.s1) * prod
            + 2.0 * self.c6 * rho * derf(e.z)
            + 2.0 * self.lm1 * self.c7 * rho
            + 2.0 * self.c8 * self.lm1 * self.lm2 * rho
            + self.c9 * self.half_d_sqrt * theta * e.eu
            + 2.0 * self.c9 * b9 * rho * e.du;

        let g = FullGrad {
            kappa: dkappa,
            nu: dnu,
            theta: dtheta,
            eta: deta,
            rho: drho,
        };
        if g.as_array().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(g)
    }

    /// Central differences with step `1e-6 max(1, |coordinate|)`. The
    /// perturbed points may leave the valid coordinate set; the formula is
    /// smooth there, so they are evaluated unchecked.
    fn grad_fd(&self, c: &OverlapCoords) -> Result<FullGrad> {
        let x = c.as_array();
        let mut g = [0.0; 5];
        for i in 0..5 {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fp = self.risk_full_unchecked(&OverlapCoords::from_array(xp))?;
            let fm = self.risk_full_unchecked(&OverlapCoords::from_array(xm))?;
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(FullGrad::from_array(g))
    }
}

/// `max_i |a_i - b_i| / max(max_i |a_i|, floor)`.
pub fn grad_rel_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().map(|a| a.abs()).fold(0.0, f64::max);
    diff / scale.max(GRAD_REL_FLOOR)
}

pub fn risk_full(c: &OverlapCoords, task: &TaskParams) -> Result<f64> {
    RiskModel::new(task, task.lambda0)?.risk_full(c)
}

pub fn risk_manifold(kappa: f64, nu: f64, task: &TaskParams) -> Result<f64> {
    RiskModel::new(task, task.lambda0)?.risk_manifold(kappa, nu)
}

pub fn grad_manifold(kappa: f64, nu: f64, task: &TaskParams) -> Result<(f64, f64)> {
    Ok(RiskModel::new(task, task.lambda0)?.grad_manifold(kappa, nu))
}

pub fn grad_full_coords(c: &OverlapCoords, task: &TaskParams, mode: GradMode) -> Result<FullGrad> {
    RiskModel::new(task, task.lambda0)?.grad_full(c, mode)
}

/// Risk of the erf predictor at the true directions `(k*, v*)`.
pub fn oracle_risk(task: &TaskParams) -> Result<f64> {
    risk_manifold(1.0, 1.0, task)
}

/// The oracle risk written out as a single expression, independent of the
/// five-coordinate formula.
pub fn oracle_risk_expression(task: &TaskParams) -> Result<f64> {
    let g2 = task.gamma_sq();
    let lam = task.lambda0;
    let d = task.d as f64;
    let l2 = lam * lam;
    Ok(
        g2 - 2.0 * g2 * erf(lam * (d / (2.0 * (1.0 + 2.0 * l2 * g2))).sqrt())
            + g2 * special::zeta(lam * (d / 2.0).sqrt(), l2 * g2)?
            + (task.seq_len as f64 - 1.0) * special::zeta(0.0, l2)?
            + task.eps * task.eps,
    )
}

/// Irreducible risk `eps^2`; excess risk is measured against it.
pub fn bayes_floor(task: &TaskParams) -> f64 {
    task.eps * task.eps
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    /// Per-position coefficients `b_j`; the predictor is `sum_j b_j X_j.v*`.
    pub coeffs: Vec<f64>,
    pub risk: f64,
    /// `eps^2 + gamma^2 - gamma^2 (gamma^2 + 1) max_j p_j`
    pub lower_bound: f64,
}

/// Best linear predictor of `y` from the flattened tokens.
pub fn linear_baseline(task: &TaskParams) -> LinearBaseline {
    let g2 = task.gamma_sq();
    let eps2 = task.eps * task.eps;
    let mut coeffs = Vec::with_capacity(task.seq_len);
    // gamma^2 - gamma^4 sum p^2/D = sum gamma^2 p (1 - p)/D using sum p = 1,
    // which is exactly zero for a single certain location.
    let mut excess = 0.0;
    for &p in &task.location_probs {
        let denom = 1.0 + p * (g2 - 1.0);
        coeffs.push(g2 * p / denom);
        excess += g2 * p * (1.0 - p) / denom;
    }
    let pmax = task.location_probs.iter().copied().fold(0.0, f64::max);
    LinearBaseline {
        coeffs,
        risk: eps2 + excess,
        lower_bound: eps2 + g2 - g2 * (g2 + 1.0) * pmax,
    }
}

/// Linear risk with uniform location probabilities.
pub fn linear_risk_uniform(seq_len: usize, gamma_sq: f64, eps: f64) -> f64 {
    eps * eps + gamma_sq - gamma_sq * gamma_sq / (seq_len as f64 + gamma_sq - 1.0)
}
