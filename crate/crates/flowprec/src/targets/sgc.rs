//! Sparse German credit logistic regression posterior.
//!
//! Parameters (unconstrained): tau' in R, lambda' in R^25, beta in R^25,
//! with tau = softplus(tau'), lambda_j = softplus(lambda'_j). The
//! funnelized variant appends s = log sigma and replaces the beta prior
//! with N(0, sigma^2 I).

use crate::math::{ln_gamma, log_sigmoid, sigmoid, softplus, LN_2PI};
use crate::targets::{CreditDataset, Target};

const GAMMA_SHAPE: f64 = 0.5;
const GAMMA_RATE: f64 = 0.5;

pub struct SgcModel {
    data: CreditDataset,
    funnelized: bool,
    name: String,
}

impl SgcModel {
    pub fn new(data: CreditDataset, funnelized: bool) -> Self {
        let name = if funnelized { "sgc-funnel" } else { "sgc" };
        SgcModel {
            data,
            funnelized,
            name: name.to_string(),
        }
    }

    fn p(&self) -> usize {
        CreditDataset::N_FEATURES
    }
}

/// log Gamma(x | shape a, rate b) density.
fn ln_gamma_pdf(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x
}

impl Target for SgcModel {
    fn dim(&self) -> usize {
        1 + 2 * self.p() + usize::from(self.funnelized)
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn log_density_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.p();
        assert_eq!(theta.len(), self.dim(), "sgc theta dimension");
        let tau_u = theta[0];
        let lam_u = &theta[1..1 + p];
        let beta = &theta[1 + p..1 + 2 * p];
        let s = if self.funnelized { theta[1 + 2 * p] } else { 0.0 };

        let tau = softplus(tau_u);
        let lam: Vec<f64> = lam_u.iter().map(|&l| softplus(l)).collect();

        let mut logp = 0.0;
        let mut grad = vec![0.0; theta.len()];

        // Priors on tau and lambda (Gamma, with the softplus log-Jacobian),
        // chain rule through softplus: d tau / d tau' = sigmoid(tau').
        let gamma_grad = |x: f64| (GAMMA_SHAPE - 1.0) / x - GAMMA_RATE;
        logp += ln_gamma_pdf(tau, GAMMA_SHAPE, GAMMA_RATE) + log_sigmoid(tau_u);
        grad[0] += gamma_grad(tau) * sigmoid(tau_u) + (1.0 - sigmoid(tau_u));
        for (j, (&lu, &l)) in lam_u.iter().zip(&lam).enumerate() {
            logp += ln_gamma_pdf(l, GAMMA_SHAPE, GAMMA_RATE) + log_sigmoid(lu);
            grad[1 + j] += gamma_grad(l) * sigmoid(lu) + (1.0 - sigmoid(lu));
        }

        // Beta prior: N(0, I) or N(0, e^{2s} I) in the funnelized variant.
        if self.funnelized {
            let inv_var = (-2.0 * s).exp();
            for (j, &b) in beta.iter().enumerate() {
                logp += -0.5 * LN_2PI - s - 0.5 * b * b * inv_var;
                grad[1 + p + j] += -b * inv_var;
                grad[1 + 2 * p] += -1.0 + b * b * inv_var;
            }
            // s prior: log sigma ~ N(0, 1).
            logp += -0.5 * LN_2PI - 0.5 * s * s;
            grad[1 + 2 * p] += -s;
        } else {
            for (j, &b) in beta.iter().enumerate() {
                logp += -0.5 * LN_2PI - 0.5 * b * b;
                grad[1 + p + j] += -b;
            }
        }

        // Bernoulli likelihood: eta_i = tau (beta .* lambda) . x_i,
        // log lik = y eta - softplus(eta).
        let w: Vec<f64> = beta.iter().zip(&lam).map(|(&b, &l)| b * l).collect();
        for (row, &y) in self.data.features.iter().zip(&self.data.labels) {
            let wx: f64 = w.iter().zip(row).map(|(&wj, &xj)| wj * xj).sum();
            let eta = tau * wx;
            logp += y as f64 * eta - softplus(eta);
            let d_eta = y as f64 - sigmoid(eta);
            grad[0] += d_eta * wx * sigmoid(tau_u);
            for j in 0..p {
                grad[1 + j] += d_eta * tau * beta[j] * row[j] * sigmoid(lam_u[j]);
                grad[1 + p + j] += d_eta * tau * lam[j] * row[j];
            }
        }
        (logp, grad)
    }
}
