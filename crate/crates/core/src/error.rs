use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("quadrature did not converge: estimate {estimate:e}, error estimate {error:e} after {panels} panels")]
    QuadratureNonConvergence {
        estimate: f64,
        error: f64,
        panels: usize,
    },

    #[error("overlap coordinates violate invariants: {0}")]
    InvalidCoords(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("overlap drifted outside [-1, 1] at step {step}: {name} = {value}")]
    OverlapDrift {
        step: usize,
        name: &'static str,
        value: f64,
    },

    #[error("degenerate projection: pre-normalization vector has zero norm")]
    ZeroNorm,

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("cannot write {path}: {reason}")]
    Io { path: String, reason: String },

    #[error("gradient self-check failed: analytic vs finite-difference relative error {rel_err:e} > {tol:e}")]
    GradientCheck { rel_err: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}
