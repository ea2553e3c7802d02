//! Gradient-based samplers running in the preconditioner's latent space:
//! shared chain state, leapfrog integration, and dual-averaging step-size
//! adaptation.

pub mod hmc;
pub mod nuts;

pub use hmc::hmc_step;
pub use nuts::nuts_step;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::precond::Preconditioner;
use crate::targets::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Hmc,
    Nuts,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hmc" => Ok(SamplerKind::Hmc),
            "nuts" => Ok(SamplerKind::Nuts),
            other => Err(Error::UnknownVariant(format!("sampler {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Hmc => "hmc",
            SamplerKind::Nuts => "nuts",
        }
    }
}

pub const DEFAULT_N_LEAPFROG: usize = 20;
pub const DEFAULT_INITIAL_STEP: f64 = 0.01;
pub const DEFAULT_TARGET_ACCEPT: f64 = 0.8;
pub const DEFAULT_MAX_DEPTH: usize = 10;
/// Energy error beyond which a NUTS leaf is flagged divergent.
pub const DIVERGENCE_ENERGY: f64 = 1000.0;

/// Nesterov dual averaging on log step size, driven by a binary
/// acceptance flag per step.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    pub target_accept: f64,
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: u64,
    gamma: f64,
    kappa: f64,
    t0: f64,
}

impl DualAveraging {
    pub fn new(eps0: f64, target_accept: f64) -> Self {
        DualAveraging {
            target_accept,
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            t: 0,
            gamma: 0.05,
            kappa: 0.75,
            t0: 10.0,
        }
    }

    /// `accepted` is the binary flag for this step.
    pub fn update(&mut self, accepted: bool) {
        self.t += 1;
        let t = self.t as f64;
        let a = if accepted { 1.0 } else { 0.0 };
        let err = self.target_accept - a;
        self.h_bar = (1.0 - 1.0 / (t + self.t0)) * self.h_bar + err / (t + self.t0);
        self.log_eps = self.mu - t.sqrt() * self.h_bar / self.gamma;
        let w = t.powf(-self.kappa);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    /// Step size while adapting.
    pub fn current_eps(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Smoothed step size to freeze after adaptation.
    pub fn frozen_eps(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Position in latent space with its cached pulled-back log-density,
/// gradient, and target-space image.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub z: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
    pub x: Vec<f64>,
}

impl ChainState {
    pub fn new(precond: &Preconditioner, target: &dyn Target, z: Vec<f64>) -> Self {
        let (logp, grad, x) = precond.latent_logpdf_grad(target, &z);
        ChainState { z, logp, grad, x }
    }

    /// Recompute cached quantities after swapping the preconditioner.
    pub fn refresh(&mut self, precond: &Preconditioner, target: &dyn Target) {
        let (logp, grad, x) = precond.latent_logpdf_grad(target, &self.z);
        self.logp = logp;
        self.grad = grad;
        self.x = x;
    }
}

pub fn sample_momentum(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// One kick-drift-kick leapfrog step with identity mass matrix; updates
/// (z, p) in place and returns the new (logp, grad, x).
pub fn leapfrog_step(
    precond: &Preconditioner,
    target: &dyn Target,
    z: &mut Vec<f64>,
    p: &mut [f64],
    grad: &mut Vec<f64>,
    eps: f64,
) -> (f64, Vec<f64>) {
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += 0.5 * eps * gi;
    }
    for (zi, pi) in z.iter_mut().zip(p.iter()) {
        *zi += eps * pi;
    }
    let (logp, new_grad, x) = precond.latent_logpdf_grad(target, z);
    for (pi, gi) in p.iter_mut().zip(new_grad.iter()) {
        *pi += 0.5 * eps * gi;
    }
    *grad = new_grad;
    (logp, x)
}

/// Per-step outcome shared by both samplers.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Binary flag fed to dual averaging.
    pub accept_flag: bool,
    /// Mean Metropolis acceptance statistic (HMC: the acceptance
    /// probability itself; NUTS: averaged over the trajectory).
    pub accept_stat: f64,
    pub divergent: bool,
    /// Tree depth reached (NUTS) or leapfrog count (HMC).
    pub steps: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_averaging_raises_step_on_constant_acceptance() {
        let mut da = DualAveraging::new(0.01, 0.8);
        for _ in 0..200 {
            da.update(true);
        }
        assert!(da.current_eps() > 0.01);
        assert!(da.frozen_eps() > 0.01);
    }

    #[test]
    fn dual_averaging_lowers_step_on_constant_rejection() {
        let mut da = DualAveraging::new(0.1, 0.8);
        for _ in 0..200 {
            da.update(false);
        }
        assert!(da.current_eps() < 0.1);
        assert!(da.frozen_eps() < 0.1);
    }

    #[test]
    fn dual_averaging_first_update_hand_checked() {
        let mut da = DualAveraging::new(0.01, 0.8);
        da.update(false);
        // t=1: h_bar = 0.8/11; log_eps = ln(0.1) - 1 * (0.8/11)/0.05.
        let h = 0.8 / 11.0;
        let expect = (0.1f64).ln() - h / 0.05;
        assert!((da.log_eps - expect).abs() < 1e-12);
        // log_eps_bar = 1^-0.75 * log_eps = log_eps.
        assert!((da.log_eps_bar - expect).abs() < 1e-12);
    }

    #[test]
    fn leapfrog_is_reversible() {
        use crate::targets::Funnel;
        let target = Funnel::with_dim(3);
        let precond = Preconditioner::identity(3);
        let mut z = vec![0.3, -0.5, 0.8];
        let z0 = z.clone();
        let mut p = vec![0.7, 0.2, -0.4];
        let (_, mut grad, _) = precond.latent_logpdf_grad(&target, &z);
        for _ in 0..10 {
            leapfrog_step(&precond, &target, &mut z, &mut p, &mut grad, 0.05);
        }
        for v in p.iter_mut() {
            *v = -*v;
        }
        for _ in 0..10 {
            leapfrog_step(&precond, &target, &mut z, &mut p, &mut grad, 0.05);
        }
        for (a, b) in z.iter().zip(&z0) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
