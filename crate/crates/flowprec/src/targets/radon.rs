//! Hierarchical radon regression posteriors (varying slopes / intercepts).
//!
//! Positive scale parameters are parameterized by their logarithm, so the
//! LogNormal(0,1) priors become exact N(0,1) priors on the unconstrained
//! coordinate.

use crate::error::{Error, Result};
use crate::math::LN_2PI;
use crate::targets::{RadonDataset, Target};

const FLAT_SD: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadonVariant {
    /// mu_i = a_{c(i)} f(i) + b
    VaryingSlopes,
    /// mu_i = a f(i) + b_{c(i)}
    VaryingIntercepts,
    /// mu_i = a_{c(i)} f(i) + b_{c(i)}
    VaryingSlopesIntercepts,
}

impl RadonVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vs" | "radon-vs" => Ok(RadonVariant::VaryingSlopes),
            "vi" | "radon-vi" => Ok(RadonVariant::VaryingIntercepts),
            "vsi" | "radon-vsi" => Ok(RadonVariant::VaryingSlopesIntercepts),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

pub struct RadonModel {
    data: RadonDataset,
    variant: RadonVariant,
    name: String,
}

/// Index layout helpers for one hierarchical group:
/// [effects (n_counties), group mean, log group sd].
struct Group {
    start: usize,
    len: usize,
}

impl Group {
    fn effects(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
    fn mean(&self) -> usize {
        self.start + self.len
    }
    fn log_sd(&self) -> usize {
        self.start + self.len + 1
    }
}

impl RadonModel {
    pub fn new(data: RadonDataset, variant: RadonVariant) -> Self {
        let name = match variant {
            RadonVariant::VaryingSlopes => "radon-vs",
            RadonVariant::VaryingIntercepts => "radon-vi",
            RadonVariant::VaryingSlopesIntercepts => "radon-vsi",
        };
        RadonModel {
            data,
            variant,
            name: name.to_string(),
        }
    }

    fn n_counties(&self) -> usize {
        self.data.n_counties
    }
}

impl Target for RadonModel {
    fn dim(&self) -> usize {
        let c = self.n_counties();
        match self.variant {
            // effects + mean + log sd + scalar coefficient + log sigma_y
            RadonVariant::VaryingSlopes | RadonVariant::VaryingIntercepts => c + 4,
            RadonVariant::VaryingSlopesIntercepts => 2 * c + 5,
        }
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn log_density_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(theta.len(), self.dim(), "radon theta dimension");
        let c = self.n_counties();
        let mut logp = 0.0;
        let mut grad = vec![0.0; theta.len()];

        // Layouts:
        // VS:  [a_c.., mu_a, lsa, b, lsy]
        // VI:  [b_c.., mu_b, lsb, a, lsy]
        // VSI: [a_c.., mu_a, lsa, b_c.., mu_b, lsb, lsy]
        let (slope_group, intercept_group, scalar_idx, lsy_idx) = match self.variant {
            RadonVariant::VaryingSlopes => {
                (Some(Group { start: 0, len: c }), None, Some(c + 2), c + 3)
            }
            RadonVariant::VaryingIntercepts => {
                (None, Some(Group { start: 0, len: c }), Some(c + 2), c + 3)
            }
            RadonVariant::VaryingSlopesIntercepts => (
                Some(Group { start: 0, len: c }),
                Some(Group {
                    start: c + 2,
                    len: c,
                }),
                None,
                2 * c + 4,
            ),
        };

        // Hierarchical priors per group: effects ~ N(mu, sd^2),
        // mu ~ N(0, FLAT_SD^2), log sd ~ N(0, 1).
        let group_prior = |g: &Group, logp: &mut f64, grad: &mut [f64]| {
            let mu = theta[g.mean()];
            let ls = theta[g.log_sd()];
            let inv_var = (-2.0 * ls).exp();
            for i in g.effects() {
                let r = theta[i] - mu;
                *logp += -0.5 * LN_2PI - ls - 0.5 * r * r * inv_var;
                grad[i] += -r * inv_var;
                grad[g.mean()] += r * inv_var;
                grad[g.log_sd()] += -1.0 + r * r * inv_var;
            }
            *logp += -0.5 * LN_2PI - FLAT_SD.ln() - 0.5 * (mu / FLAT_SD).powi(2);
            grad[g.mean()] += -mu / (FLAT_SD * FLAT_SD);
            *logp += -0.5 * LN_2PI - 0.5 * ls * ls;
            grad[g.log_sd()] += -ls;
        };
        if let Some(ref g) = slope_group {
            group_prior(g, &mut logp, &mut grad);
        }
        if let Some(ref g) = intercept_group {
            group_prior(g, &mut logp, &mut grad);
        }
        if let Some(i) = scalar_idx {
            let v = theta[i];
            logp += -0.5 * LN_2PI - FLAT_SD.ln() - 0.5 * (v / FLAT_SD).powi(2);
            grad[i] += -v / (FLAT_SD * FLAT_SD);
        }
        let lsy = theta[lsy_idx];
        logp += -0.5 * LN_2PI - 0.5 * lsy * lsy;
        grad[lsy_idx] += -lsy;

        // Gaussian likelihood with sigma_y = exp(lsy).
        let inv_var_y = (-2.0 * lsy).exp();
        for i in 0..self.data.n_rows() {
            let county = self.data.county_index[i];
            let f = self.data.floor[i];
            let (slope_idx, intercept_idx) = match self.variant {
                RadonVariant::VaryingSlopes => {
                    (slope_group.as_ref().unwrap().start + county, scalar_idx.unwrap())
                }
                RadonVariant::VaryingIntercepts => {
                    (scalar_idx.unwrap(), intercept_group.as_ref().unwrap().start + county)
                }
                RadonVariant::VaryingSlopesIntercepts => (
                    slope_group.as_ref().unwrap().start + county,
                    intercept_group.as_ref().unwrap().start + county,
                ),
            };
            let mu_i = theta[slope_idx] * f + theta[intercept_idx];
            let r = self.data.log_radon[i] - mu_i;
            logp += -0.5 * LN_2PI - lsy - 0.5 * r * r * inv_var_y;
            grad[slope_idx] += r * inv_var_y * f;
            grad[intercept_idx] += r * inv_var_y;
            grad[lsy_idx] += -1.0 + r * r * inv_var_y;
        }
        (logp, grad)
    }
}
