//! Target distributions in unconstrained space, with analytic gradients.

mod data;
mod radon;
mod sgc;

pub use data::{load_credit, load_radon, CreditDataset, RadonDataset};
pub use radon::{RadonModel, RadonVariant};
pub use sgc::SgcModel;

use crate::math::{ln_normal_pdf, LN_2PI};

/// A target density on R^dim. Evaluation is pure and stateless; the score
/// function used by KSD is the same gradient.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;
    fn name(&self) -> &str;
    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_density_grad(x).0
    }
    fn log_density_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Neal's funnel: x0 ~ N(0, 3^2), x_i | x0 ~ N(0, exp(x0)) for i >= 1.
pub struct Funnel {
    dim: usize,
}

impl Funnel {
    pub fn new() -> Self {
        Funnel { dim: 10 }
    }

    pub fn with_dim(dim: usize) -> Self {
        assert!(dim >= 2);
        Funnel { dim }
    }
}

impl Default for Funnel {
    fn default() -> Self {
        Self::new()
    }
}

impl Target for Funnel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "funnel"
    }

    fn log_density_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), self.dim);
        let x0 = x[0];
        let inv_var = (-x0).exp(); // conditional variance is exp(x0)
        let mut logp = ln_normal_pdf(x0, 0.0, 3.0);
        let mut grad = vec![0.0; self.dim];
        grad[0] = -x0 / 9.0;
        for &xi in &x[1..] {
            // log N(xi | 0, exp(x0)) = -0.5 ln(2 pi) - 0.5 x0 - xi^2 e^{-x0} / 2
            logp += -0.5 * LN_2PI - 0.5 * x0 - 0.5 * xi * xi * inv_var;
            grad[0] += -0.5 + 0.5 * xi * xi * inv_var;
        }
        for i in 1..self.dim {
            grad[i] = -x[i] * inv_var;
        }
        (logp, grad)
    }
}

/// 100-d banana: x0 ~ N(0, 10^2), x1 | x0 ~ N(0.03 x0^2 - 3, 1),
/// x_i ~ N(0, 1) for i >= 2.
pub struct Banana {
    dim: usize,
}

impl Banana {
    pub fn new() -> Self {
        Banana { dim: 100 }
    }
}

impl Default for Banana {
    fn default() -> Self {
        Self::new()
    }
}

impl Target for Banana {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "banana"
    }

    fn log_density_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), self.dim);
        let x0 = x[0];
        let mu1 = 0.03 * x0 * x0 - 3.0;
        let r1 = x[1] - mu1;
        let mut logp = ln_normal_pdf(x0, 0.0, 10.0) + ln_normal_pdf(x[1], mu1, 1.0);
        let mut grad = vec![0.0; self.dim];
        grad[0] = -x0 / 100.0 + r1 * 0.06 * x0;
        grad[1] = -r1;
        for i in 2..self.dim {
            logp += ln_normal_pdf(x[i], 0.0, 1.0);
            grad[i] = -x[i];
        }
        (logp, grad)
    }
}

/// Isotropic standard normal, used for sampler calibration.
pub struct StdGaussian {
    dim: usize,
}

impl StdGaussian {
    pub fn new(dim: usize) -> Self {
        StdGaussian { dim }
    }
}

impl Target for StdGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "std-gaussian"
    }

    fn log_density_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut logp = -0.5 * self.dim as f64 * LN_2PI;
        let mut grad = vec![0.0; self.dim];
        for i in 0..self.dim {
            logp -= 0.5 * x[i] * x[i];
            grad[i] = -x[i];
        }
        (logp, grad)
    }
}
