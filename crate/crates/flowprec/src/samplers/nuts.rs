//! Multinomial No-U-Turn sampler with identity mass matrix, following the
//! iterative-doubling scheme: subtrees are combined with
//! log-sum-exp-weighted proposals and the expansion stops on a U-turn,
//! divergence, or the depth cap.

use rand::Rng;

use crate::flows::precond::Preconditioner;
use crate::samplers::{
    kinetic, leapfrog_step, sample_momentum, ChainState, StepStats, DIVERGENCE_ENERGY,
};
use crate::targets::Target;

struct Leaf {
    z: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    x: Vec<f64>,
}

struct Subtree {
    // Trajectory endpoints for the U-turn check.
    z_minus: Vec<f64>,
    p_minus: Vec<f64>,
    grad_minus: Vec<f64>,
    z_plus: Vec<f64>,
    p_plus: Vec<f64>,
    grad_plus: Vec<f64>,
    // Multinomial proposal drawn from this subtree.
    prop: Leaf,
    log_sum_weight: f64,
    sum_accept: f64,
    n_leaves: f64,
    divergent: bool,
    turning: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn uturn(z_minus: &[f64], z_plus: &[f64], p_minus: &[f64], p_plus: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..z_minus.len() {
        let d = z_plus[i] - z_minus[i];
        dot_minus += d * p_minus[i];
        dot_plus += d * p_plus[i];
    }
    dot_minus < 0.0 || dot_plus < 0.0
}

#[allow(clippy::too_many_arguments)]
fn build_tree(
    precond: &Preconditioner,
    target: &dyn Target,
    leaf: &Leaf,
    depth: usize,
    direction: f64,
    eps: f64,
    h0: f64,
    rng: &mut impl Rng,
) -> Subtree {
    if depth == 0 {
        let mut z = leaf.z.clone();
        let mut p = leaf.p.clone();
        let mut grad = leaf.grad.clone();
        let (logp, x) =
            leapfrog_step(precond, target, &mut z, &mut p, &mut grad, direction * eps);
        let h = -logp + kinetic(&p);
        let delta = h0 - h; // log joint weight relative to the start
        let divergent = !delta.is_finite() || -delta > DIVERGENCE_ENERGY;
        let (log_w, accept) = if delta.is_finite() {
            (delta, delta.min(0.0).exp())
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        let new = Leaf { z: z.clone(), p: p.clone(), grad: grad.clone(), logp, x };
        return Subtree {
            z_minus: z.clone(),
            p_minus: p.clone(),
            grad_minus: grad.clone(),
            z_plus: z,
            p_plus: p,
            grad_plus: grad,
            prop: new,
            log_sum_weight: log_w,
            sum_accept: accept,
            n_leaves: 1.0,
            divergent,
            turning: false,
        };
    }

    let mut first = build_tree(precond, target, leaf, depth - 1, direction, eps, h0, rng);
    if first.divergent || first.turning {
        return first;
    }
    let outer_leaf = if direction > 0.0 {
        Leaf {
            z: first.z_plus.clone(),
            p: first.p_plus.clone(),
            grad: first.grad_plus.clone(),
            logp: 0.0,
            x: Vec::new(),
        }
    } else {
        Leaf {
            z: first.z_minus.clone(),
            p: first.p_minus.clone(),
            grad: first.grad_minus.clone(),
            logp: 0.0,
            x: Vec::new(),
        }
    };
    let second = build_tree(precond, target, &outer_leaf, depth - 1, direction, eps, h0, rng);

    if direction > 0.0 {
        first.z_plus = second.z_plus.clone();
        first.p_plus = second.p_plus.clone();
        first.grad_plus = second.grad_plus.clone();
    } else {
        first.z_minus = second.z_minus.clone();
        first.p_minus = second.p_minus.clone();
        first.grad_minus = second.grad_minus.clone();
    }
    let total = log_add_exp(first.log_sum_weight, second.log_sum_weight);
    // Uniform multinomial swap within the subtree.
    if (second.log_sum_weight - total).exp() > rng.gen::<f64>() {
        first.prop = second.prop;
    }
    first.log_sum_weight = total;
    first.sum_accept += second.sum_accept;
    first.n_leaves += second.n_leaves;
    first.divergent = second.divergent;
    first.turning = second.turning
        || uturn(&first.z_minus, &first.z_plus, &first.p_minus, &first.p_plus);
    first
}

/// One NUTS transition; mutates `state` with the multinomial draw from
/// the trajectory. `accept_flag` is a Bernoulli draw on the mean
/// acceptance statistic, for dual averaging.
pub fn nuts_step(
    precond: &Preconditioner,
    target: &dyn Target,
    state: &mut ChainState,
    eps: f64,
    max_depth: usize,
    rng: &mut impl Rng,
) -> StepStats {
    let p0 = sample_momentum(state.z.len(), rng);
    let h0 = -state.logp + kinetic(&p0);

    let mut tree = Subtree {
        z_minus: state.z.clone(),
        p_minus: p0.clone(),
        grad_minus: state.grad.clone(),
        z_plus: state.z.clone(),
        p_plus: p0.clone(),
        grad_plus: state.grad.clone(),
        prop: Leaf {
            z: state.z.clone(),
            p: p0,
            grad: state.grad.clone(),
            logp: state.logp,
            x: state.x.clone(),
        },
        log_sum_weight: 0.0,
        sum_accept: 0.0,
        n_leaves: 0.0,
        divergent: false,
        turning: false,
    };

    let mut depth = 0;
    let mut divergent = false;
    while depth < max_depth {
        let direction: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let leaf = if direction > 0.0 {
            Leaf {
                z: tree.z_plus.clone(),
                p: tree.p_plus.clone(),
                grad: tree.grad_plus.clone(),
                logp: 0.0,
                x: Vec::new(),
            }
        } else {
            Leaf {
                z: tree.z_minus.clone(),
                p: tree.p_minus.clone(),
                grad: tree.grad_minus.clone(),
                logp: 0.0,
                x: Vec::new(),
            }
        };
        let new = build_tree(precond, target, &leaf, depth, direction, eps, h0, rng);
        tree.sum_accept += new.sum_accept;
        tree.n_leaves += new.n_leaves;
        if new.divergent {
            divergent = true;
            break;
        }
        if new.turning {
            break;
        }
        // Biased progressive sampling favors the new subtree.
        let swap_prob = (new.log_sum_weight - tree.log_sum_weight).exp().min(1.0);
        if rng.gen::<f64>() < swap_prob {
            tree.prop = new.prop;
        }
        tree.log_sum_weight = log_add_exp(tree.log_sum_weight, new.log_sum_weight);
        if direction > 0.0 {
            tree.z_plus = new.z_plus;
            tree.p_plus = new.p_plus;
            tree.grad_plus = new.grad_plus;
        } else {
            tree.z_minus = new.z_minus;
            tree.p_minus = new.p_minus;
            tree.grad_minus = new.grad_minus;
        }
        depth += 1;
        if uturn(&tree.z_minus, &tree.z_plus, &tree.p_minus, &tree.p_plus) {
            break;
        }
    }

    if tree.prop.logp.is_finite() && !tree.prop.x.is_empty() {
        state.z = tree.prop.z;
        state.logp = tree.prop.logp;
        state.grad = tree.prop.grad;
        state.x = tree.prop.x;
    }
    let accept_stat = if tree.n_leaves > 0.0 {
        tree.sum_accept / tree.n_leaves
    } else {
        0.0
    };
    StepStats {
        accept_flag: rng.gen::<f64>() < accept_stat,
        accept_stat,
        divergent,
        steps: depth,
    }
}
