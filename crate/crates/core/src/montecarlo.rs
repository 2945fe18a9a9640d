//! Monte Carlo estimates of the population risk, and realization of overlap
//! coordinates as actual `(k, v)` pairs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::par::Exec;
use crate::predictor::{self, ParamPair};
use crate::risk::OverlapCoords;
use crate::rng;
use crate::task::{Instance, TaskParams};

/// Instances per block. Each block draws from its own stream, so the estimate
/// is the same whatever the thread count.
pub const BLOCK: usize = 10_000;

/// Minimum pivot accepted when inverting the Gram relations.
const GRAM_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    /// Distance to `x` in units of the standard error.
    pub fn z_score(&self, x: f64) -> f64 {
        (self.mean - x).abs() / self.stderr
    }
}

/// Per-statistic running sums.
#[derive(Debug, Clone, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

/// Estimate `E[f(instance)]` for each of the `m` outputs of `f`, on common
/// draws. `f` writes its `m` values into the provided slice.
pub fn mean_many<F>(
    task: &TaskParams,
    n: usize,
    m: usize,
    seed: u64,
    exec: Exec,
    f: F,
) -> Vec<Estimate>
where
    F: Fn(&Instance, &mut [f64]) + Sync + Send,
{
    let blocks = n.div_ceil(BLOCK);
    let partial = exec.map(blocks, |b| {
        let mut r = rng::stream(seed, b as u64);
        let size = BLOCK.min(n - b * BLOCK);
        let mut inst = task.sample_instance(&mut r);
        let mut out = vec![0.0; m];
        let mut acc = vec![Moments::default(); m];
        for i in 0..size {
            if i > 0 {
                task.sample_into(&mut r, &mut inst);
            }
            f(&inst, &mut out);
            for (a, &x) in acc.iter_mut().zip(&out) {
                a.sum += x;
                a.sum_sq += x * x;
            }
        }
        acc
    });
    let mut total = vec![Moments::default(); m];
    for block in partial {
        for (t, a) in total.iter_mut().zip(block) {
            t.sum += a.sum;
            t.sum_sq += a.sum_sq;
        }
    }
    let nf = n as f64;
    total
        .into_iter()
        .map(|t| {
            let mean = t.sum / nf;
            let var = ((t.sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            Estimate {
                mean,
                stderr: (var / nf).sqrt(),
                n,
            }
        })
        .collect()
}

/// Empirical risk `E[(y - T(X))^2]` of the erf predictor for each pair.
pub fn empirical_risks(
    pairs: &[ParamPair],
    lambda: f64,
    task: &TaskParams,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Vec<Estimate> {
    mean_many(task, n, pairs.len(), seed, exec, |inst, out| {
        for (o, pair) in out.iter_mut().zip(pairs) {
            let r = inst.y - predictor::predict_erf(pair, lambda, &inst.x);
            *o = r * r;
        }
    })
}

pub fn empirical_risk(
    pair: &ParamPair,
    lambda: f64,
    task: &TaskParams,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Estimate {
    empirical_risks(std::slice::from_ref(pair), lambda, task, n, seed, exec)[0]
}

/// Two unit vectors completing `(k*, v*)` to an orthonormal family, taken by
/// Gram–Schmidt over the standard basis.
fn complement_pair(task: &TaskParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(2);
    for i in 0..task.d {
        let mut e = vec![0.0; task.d];
        e[i] = 1.0;
        let mut basis: Vec<&[f64]> = vec![&task.k_star, &task.v_star];
        basis.extend(found.iter().map(|f| f.as_slice()));
        linalg::project_out(&mut e, &basis);
        linalg::project_out(&mut e, &basis);
        if linalg::norm(&e) > 0.5 {
            linalg::normalize(&mut e)?;
            found.push(e);
            if found.len() == 2 {
                let e4 = found.pop().unwrap();
                let e3 = found.pop().unwrap();
                return Ok((e3, e4));
            }
        }
    }
    Err(Error::Shape(
        "could not complete (k*, v*) to four directions".into(),
    ))
}

/// Build `(k, v)` in `span(k*, v*, e3, e4)` with the given overlaps:
/// `k = kappa k* + eta v* + k3 e3`, `v = theta k* + nu v* + v3 e3 + v4 e4`.
/// Fails when the Gram matrix of `(k, v, k*, v*)` is not PSD with margin 1e-8.
pub fn realize_coords(c: &OverlapCoords, task: &TaskParams) -> Result<ParamPair> {
    if task.d < 4 {
        return Err(crate::error::invalid(
            "d",
            "realizing overlaps needs d >= 4",
        ));
    }
    c.validate()?;
    let (e3, e4) = complement_pair(task)?;
    let k3_sq = 1.0 - c.kappa * c.kappa - c.eta * c.eta;
    let resid = c.rho - c.kappa * c.theta - c.eta * c.nu;
    let (k3, v3) = if k3_sq >= GRAM_MARGIN {
        let k3 = k3_sq.sqrt();
        (k3, resid / k3)
    } else if k3_sq > -GRAM_MARGIN && resid.abs() <= GRAM_MARGIN {
        (0.0, 0.0)
    } else {
        return Err(Error::InvalidCoords(format!(
            "not realizable: 1 - kappa^2 - eta^2 = {k3_sq:e}, residual {resid:e}"
        )));
    };
    let v4_sq = 1.0 - c.theta * c.theta - c.nu * c.nu - v3 * v3;
    if v4_sq < -GRAM_MARGIN {
        return Err(Error::InvalidCoords(format!(
            "not realizable: remaining norm of v is {v4_sq:e}"
        )));
    }
    let v4 = v4_sq.max(0.0).sqrt();
    let mut k = vec![0.0; task.d];
    let mut v = vec![0.0; task.d];
    linalg::axpy(c.kappa, &task.k_star, &mut k);
    linalg::axpy(c.eta, &task.v_star, &mut k);
    linalg::axpy(k3, &e3, &mut k);
    linalg::axpy(c.theta, &task.k_star, &mut v);
    linalg::axpy(c.nu, &task.v_star, &mut v);
    linalg::axpy(v3, &e3, &mut v);
    linalg::axpy(v4, &e4, &mut v);
    linalg::normalize(&mut k)?;
    linalg::normalize(&mut v)?;
    Ok(ParamPair { k, v })
}

/// Overlaps of a uniformly random `(k, v)` pair in a 4-dimensional space
/// containing `k*` and `v*`; always realizable.
pub fn random_coords<R: Rng + ?Sized>(rng: &mut R) -> OverlapCoords {
    let k = linalg::random_unit(rng, 4);
    let v = linalg::random_unit(rng, 4);
    OverlapCoords {
        kappa: k[0],
        nu: v[1],
        theta: v[0],
        eta: k[1],
        rho: linalg::dot(&k, &v),
    }
}
