//! Hamiltonian Monte Carlo with a fixed leapfrog count and identity mass
//! matrix, operating on the preconditioner's latent space.

use rand::Rng;

use crate::flows::precond::Preconditioner;
use crate::samplers::{kinetic, leapfrog_step, sample_momentum, ChainState, StepStats};
use crate::targets::Target;

/// One HMC transition; mutates `state` on acceptance.
pub fn hmc_step(
    precond: &Preconditioner,
    target: &dyn Target,
    state: &mut ChainState,
    eps: f64,
    n_leapfrog: usize,
    rng: &mut impl Rng,
) -> StepStats {
    let mut p = sample_momentum(state.z.len(), rng);
    let h0 = -state.logp + kinetic(&p);

    let mut z = state.z.clone();
    let mut grad = state.grad.clone();
    let mut logp = state.logp;
    let mut x = state.x.clone();
    for _ in 0..n_leapfrog {
        let (lp, xi) = leapfrog_step(precond, target, &mut z, &mut p, &mut grad, eps);
        logp = lp;
        x = xi;
        if !logp.is_finite() {
            break;
        }
    }

    let h1 = -logp + kinetic(&p);
    let delta = h0 - h1;
    let accept_stat = if delta.is_finite() {
        delta.min(0.0).exp()
    } else {
        0.0
    };
    let accepted = accept_stat > 0.0 && rng.gen::<f64>() < accept_stat;
    if accepted {
        state.z = z;
        state.logp = logp;
        state.grad = grad;
        state.x = x;
    }
    StepStats {
        accept_flag: accepted,
        accept_stat,
        divergent: !delta.is_finite() || -delta > crate::samplers::DIVERGENCE_ENERGY,
        steps: n_leapfrog,
    }
}
