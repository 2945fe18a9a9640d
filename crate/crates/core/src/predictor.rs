//! Predictors on a token matrix `X` (rows are tokens).

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::special;
use crate::task::TaskParams;

const UNIT_TOL: f64 = 1e-12;

/// Key/value directions `(k, v)` on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPair {
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParamPair {
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
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(crate::error::invalid(name, format!("norm {n} is not 1")));
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
}

/// Single-head attention parameters. `q`, `k`, `v` are `d x p`, `o` is `o x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
    pub x_cls: Vec<f64>,
}

impl AttentionParams {
    pub fn validate(&self) -> Result<()> {
        let d = self.x_cls.len();
        let p = self.q.cols();
        if p == 0 || self.o.rows() == 0 {
            return Err(Error::Shape("p and o must be >= 1".into()));
        }
        for (name, m) in [("Q", &self.q), ("K", &self.k), ("V", &self.v)] {
            if m.rows() != d || m.cols() != p {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {d}x{p}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if self.o.cols() != p {
            return Err(Error::Shape(format!(
                "O has {} columns, expected {p}",
                self.o.cols()
            )));
        }
        Ok(())
    }
}

/// `(X v*)_j` at `j = argmax_l (X k*)_l`, lowest index on ties.
pub fn predict_oracle(task: &TaskParams, x: &Matrix) -> f64 {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (l, row) in x.iter_rows().enumerate() {
        let s = linalg::dot(row, &task.k_star);
        if s > best_score {
            best_score = s;
            best = l;
        }
    }
    linalg::dot(x.row(best), &task.v_star)
}

/// `sum_l erf(lambda X_l.k) X_l.v`
pub fn predict_erf(pair: &ParamPair, lambda: f64, x: &Matrix) -> f64 {
    x.iter_rows()
        .map(|row| special::erf(lambda * linalg::dot(row, &pair.k)) * linalg::dot(row, &pair.v))
        .sum()
}

/// Softmax attention weights `softmax(lambda X k)`.
pub fn softmax_weights(k: &[f64], lambda: f64, x: &Matrix) -> Vec<f64> {
    let scores: Vec<f64> = x
        .iter_rows()
        .map(|row| lambda * linalg::dot(row, k))
        .collect();
    softmax(&scores)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}

/// `softmax(lambda X k)^T (X v)`
pub fn predict_softmax(pair: &ParamPair, lambda: f64, x: &Matrix) -> f64 {
    let w = softmax_weights(&pair.k, lambda, x);
    x.iter_rows()
        .zip(&w)
        .map(|(row, wl)| wl * linalg::dot(row, &pair.v))
        .sum()
}

/// [CLS] row of the attention layer, `softmax(lambda a K^T X^T) X V O^T` with
/// `a = x_cls^T Q`. Returns a vector of length `o`.
pub fn attention_cls_row(att: &AttentionParams, lambda: f64, x: &Matrix) -> Result<Vec<f64>> {
    att.validate()?;
    if x.cols() != att.x_cls.len() {
        return Err(Error::Shape(format!(
            "X has {} columns, expected d = {}",
            x.cols(),
            att.x_cls.len()
        )));
    }
    let a = att.q.tr_mul_vec(&att.x_cls); // length p
    let key_dir = att.k.mul_vec(&a); // K a, length d
    let w = softmax_weights(&key_dir, lambda, x);
    // pooled token sum_l w_l X_l
    let mut pooled = vec![0.0; x.cols()];
    for (row, wl) in x.iter_rows().zip(&w) {
        linalg::axpy(*wl, row, &mut pooled);
    }
    let value = att.v.tr_mul_vec(&pooled); // V^T pooled, length p
    Ok(att.o.mul_vec(&value))
}
