//! Normalizing-flow preconditioning for MCMC: Gaussianity screening,
//! factorized RNVP transport maps, gradient-based samplers in latent
//! space, and the warmup schedule tying them together.

pub mod calibration;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod gaussianity;
pub mod math;
pub mod runner;
pub mod samplers;
pub mod targets;
pub mod training;
pub mod warmup;

pub use error::{Error, Result};
