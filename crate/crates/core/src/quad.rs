//! Composite Gauss–Legendre quadrature with panel doubling.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const ORDER: usize = 16;
const MAX_DOUBLINGS: usize = 12;

/// Nodes and weights of the `ORDER`-point rule on [-1, 1], by Newton iteration
/// on the Legendre recurrence.
fn rule() -> &'static ([f64; ORDER], [f64; ORDER]) {
    static RULE: OnceLock<([f64; ORDER], [f64; ORDER])> = OnceLock::new();
    RULE.get_or_init(gauss_legendre::<ORDER>)
}

pub(crate) fn gauss_legendre<const N: usize>() -> ([f64; N], [f64; N]) {
    let mut x = [0.0; N];
    let mut w = [0.0; N];
    let n = N as f64;
    for i in 0..N.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_N(z) and its derivative.
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=N {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[N - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[N - 1 - i] = wi;
    }
    (x, w)
}

fn composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = rule();
    let h = (b - a) / panels as f64;
    let half = 0.5 * h;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let s: f64 = x
            .iter()
            .zip(w)
            .map(|(xi, wi)| wi * f(mid + half * xi))
            .sum();
        total += s * half;
    }
    total
}

/// Integrate `f` over `[a, b]`, doubling the number of panels until two
/// successive estimates differ by less than `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut panels = 2;
    let mut prev = composite(&f, a, b, panels);
    let mut err = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        panels *= 2;
        let next = composite(&f, a, b, panels);
        err = (next - prev).abs();
        if err < tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureNonConvergence {
        estimate: prev,
        error: err,
        panels,
    })
}
