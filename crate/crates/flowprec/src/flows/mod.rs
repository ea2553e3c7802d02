//! Bijections and density models used as MCMC preconditioners: linear
//! (diagonal/dense) maps, RNVP flows, and the factorized combination of a
//! Gaussian block with a conditional flow.

pub mod factorized;
pub mod linear;
pub mod precond;
pub mod rnvp;

pub use factorized::{build_factorized, FactorizedPreconditioner};
pub use linear::{dense_fit, diagonal_fit, fit_gaussian_block, Chol, LinearGaussian};
pub use precond::{ParamSlice, Preconditioner, PreconditionerKind};
pub use rnvp::{flow_log_density, rnvp_build, ActNorm, AffineCoupling, Layer, Rnvp};

use crate::error::Result;

/// An invertible map with tractable log-det-Jacobian. `ctx` is an optional
/// conditioning input of length `context_dim`; pass `&[]` when unused.
pub trait Bijection {
    fn dim(&self) -> usize;

    fn context_dim(&self) -> usize {
        0
    }

    /// x -> (z, log |det J_f(x)|)
    fn forward(&self, x: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, f64)>;

    /// z -> (x, log |det J_{f^-1}(z)|)
    fn inverse(&self, z: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, f64)>;
}
