//! Parametric AC optimal power flow, KKT sensitivities and
//! sensitivity-informed neural predictors.

pub mod cases;
pub mod dataset;
pub mod error;
pub(crate) mod linalg;
pub mod mlp;
pub mod netmodel;
pub mod opf;
pub mod pinning;
pub mod powerflow;
pub mod qcqp;
pub mod sensitivity;
pub mod quad;

pub use error::{Error, Result};
