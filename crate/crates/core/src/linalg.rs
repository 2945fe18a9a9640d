//! Small dense helpers over `f64` slices. Dimensions here are a few hundred at
//! most, so plain loops are all that is needed.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

/// Rescale `x` to unit norm in place.
pub fn normalize(x: &mut [f64]) -> Result<()> {
    let n = norm(x);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    scale(1.0 / n, x);
    Ok(())
}

/// Remove from `x` its components along each of the (orthonormal) `basis` vectors.
pub fn project_out(x: &mut [f64], basis: &[&[f64]]) {
    for b in basis {
        let c = dot(x, b);
        axpy(-c, b, x);
    }
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Uniform draw on the unit sphere of dimension `d`.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut g = gaussian_vector(rng, d);
        if normalize(&mut g).is_ok() {
            return g;
        }
    }
}

/// Uniform draw on the unit sphere restricted to the orthogonal complement of
/// the orthonormal family `basis`. Projection is applied twice so the result
/// is orthogonal to working precision.
pub fn random_unit_orthogonal<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    basis: &[&[f64]],
) -> Vec<f64> {
    loop {
        let mut g = gaussian_vector(rng, d);
        project_out(&mut g, basis);
        project_out(&mut g, basis);
        if norm(&g) > 1e-8 && normalize(&mut g).is_ok() {
            return g;
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// `self * x` for a vector of length `cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.iter_rows().map(|r| dot(r, x)).collect()
    }

    /// `self^T * x` for a vector of length `rows`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xi) in self.iter_rows().zip(x) {
            axpy(xi, r, &mut out);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
