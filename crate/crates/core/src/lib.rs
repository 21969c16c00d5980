//! Bayesian inference for paired origin-destination point patterns.
//!
//! The crate fits gridded Poisson and log-Gaussian Cox intensity models to an
//! origin pattern, Gaussian kernels for destinations given origins (constant or
//! spatially varying), and a joint intensity over origin-destination pairs. It
//! also provides thinning-based cross-validation, proper scoring rules, and
//! generators for synthetic data from each model.

pub mod config;
pub mod error;
pub mod gp;
pub mod grid;
pub mod io;
pub mod joint;
pub mod mcmc;
pub mod ppm;
pub mod recovery;
pub mod rng;
pub mod select;
pub mod simulate;
pub mod validation;

pub use error::{Error, Result};
