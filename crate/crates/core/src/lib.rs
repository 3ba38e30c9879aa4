//! Bayesian occupancy species distribution models with spatially-varying
//! coefficients fitted through nearest-neighbor Gaussian processes.

pub mod cli;
pub mod data;
pub mod error;
pub mod gp;
pub(crate) mod linalg;
pub mod mcmc;
pub mod model;
pub mod outputs;
pub mod sim;
pub mod spec;

pub use error::{Error, Result};
