// `!(x > y)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod montecarlo;
pub mod optimizer;
pub mod par;
pub mod predictor;
pub mod quad;
pub mod risk;
pub mod rng;
pub mod special;
pub mod task;
pub mod validate;

pub use error::{Error, Result};
