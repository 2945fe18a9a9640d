//! The single-location regression model: a sequence of `L` tokens in `R^d`,
//! one of which (at a latent location `J0`) carries a mean `sqrt(d/2) k*` and
//! determines the response `y = X_{J0}^T v* + xi`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};

const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    /// Token dimension.
    pub d: usize,
    /// Sequence length.
    pub seq_len: usize,
    /// Standard deviation of the informative token.
    pub gamma: f64,
    /// Noise standard deviation.
    pub eps: f64,
    /// Base inverse temperature.
    pub lambda0: f64,
    /// `P(J0 = j)` for each position.
    pub location_probs: Vec<f64>,
    pub k_star: Vec<f64>,
    pub v_star: Vec<f64>,
}

/// One draw `(X, y, J0)`. `j0` is a 0-based row index into `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x: Matrix,
    pub y: f64,
    pub j0: usize,
}

pub fn uniform_probs(seq_len: usize) -> Vec<f64> {
    vec![1.0 / seq_len as f64; seq_len]
}

/// Draw `k*` uniformly on the sphere and `v*` uniformly on the great sphere
/// orthogonal to it. `location_probs = None` means uniform.
pub fn make_task<R: Rng + ?Sized>(
    d: usize,
    seq_len: usize,
    gamma: f64,
    eps: f64,
    lambda0: f64,
    location_probs: Option<Vec<f64>>,
    rng: &mut R,
) -> Result<TaskParams> {
    if d < 2 {
        return Err(invalid("d", "an orthogonal pair (k*, v*) needs d >= 2"));
    }
    if seq_len < 1 {
        return Err(invalid("L", "must be >= 1"));
    }
    let k_star = linalg::random_unit(rng, d);
    let v_star = linalg::random_unit_orthogonal(rng, d, &[&k_star]);
    TaskParams::new(
        d,
        seq_len,
        gamma,
        eps,
        lambda0,
        location_probs.unwrap_or_else(|| uniform_probs(seq_len)),
        k_star,
        v_star,
    )
}

impl TaskParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        seq_len: usize,
        gamma: f64,
        eps: f64,
        lambda0: f64,
        location_probs: Vec<f64>,
        k_star: Vec<f64>,
        v_star: Vec<f64>,
    ) -> Result<Self> {
        let task = Self {
            d,
            seq_len,
            gamma,
            eps,
            lambda0,
            location_probs,
            k_star,
            v_star,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid("d", "must be >= 2"));
        }
        if self.seq_len < 1 {
            return Err(invalid("L", "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(invalid("eps", format!("must be >= 0, got {}", self.eps)));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(invalid(
                "lambda0",
                format!("must be > 0, got {}", self.lambda0),
            ));
        }
        if self.location_probs.len() != self.seq_len {
            return Err(invalid(
                "location_probs",
                format!(
                    "length {} != L = {}",
                    self.location_probs.len(),
                    self.seq_len
                ),
            ));
        }
        if self.location_probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(invalid("location_probs", "entries must be >= 0"));
        }
        let total: f64 = self.location_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("location_probs", format!("sum to {total}, not 1")));
        }
        if self.k_star.len() != self.d || self.v_star.len() != self.d {
            return Err(invalid("k_star/v_star", "length must equal d"));
        }
        let nk = linalg::norm(&self.k_star);
        let nv = linalg::norm(&self.v_star);
        if (nk - 1.0).abs() > UNIT_TOL || (nv - 1.0).abs() > UNIT_TOL {
            return Err(invalid(
                "k_star/v_star",
                format!("norms {nk}, {nv} are not 1"),
            ));
        }
        let c = linalg::dot(&self.k_star, &self.v_star);
        if c.abs() > UNIT_TOL {
            return Err(invalid(
                "k_star/v_star",
                format!("not orthogonal: k*.v* = {c:e}"),
            ));
        }
        Ok(())
    }

    pub fn gamma_sq(&self) -> f64 {
        self.gamma * self.gamma
    }

    pub fn with_lambda(&self, lambda0: f64) -> Self {
        Self {
            lambda0,
            ..self.clone()
        }
    }

    pub fn sample_location<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (j, &p) in self.location_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding slack above the last partial sum
        self.location_probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.seq_len - 1)
    }

    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Instance {
        let mut inst = Instance {
            x: Matrix::zeros(self.seq_len, self.d),
            y: 0.0,
            j0: 0,
        };
        self.sample_into(rng, &mut inst);
        inst
    }

    /// Overwrite `inst` with a fresh draw, reusing its buffer.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, inst: &mut Instance) {
        debug_assert_eq!(inst.x.rows(), self.seq_len);
        debug_assert_eq!(inst.x.cols(), self.d);
        let j0 = self.sample_location(rng);
        let shift = (self.d as f64 / 2.0).sqrt();
        for l in 0..self.seq_len {
            let row = inst.x.row_mut(l);
            if l == j0 {
                for (xi, &ki) in row.iter_mut().zip(&self.k_star) {
                    let g: f64 = rng.sample(StandardNormal);
                    *xi = shift * ki + self.gamma * g;
                }
            } else {
                for xi in row.iter_mut() {
                    *xi = rng.sample(StandardNormal);
                }
            }
        }
        let noise: f64 = if self.eps > 0.0 {
            self.eps * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        inst.y = linalg::dot(inst.x.row(j0), &self.v_star) + noise;
        inst.j0 = j0;
    }
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::NonFinite("instance"));
        }
        Ok(())
    }
}
