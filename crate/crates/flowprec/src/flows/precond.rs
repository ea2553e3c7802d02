//! Preconditioner wrapper used by the samplers: maps between target space
//! and latent space and evaluates the pulled-back log-density
//! g(z) = log pi(f^-1(z)) + log |det J_{f^-1}(z)| together with its
//! gradient, using the flows' hand-written inverse VJPs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::factorized::FactorizedPreconditioner;
use crate::flows::linear::LinearGaussian;
use crate::flows::rnvp::{Layer, Rnvp};
use crate::flows::Bijection;
use crate::targets::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    Identity,
    Diagonal,
    Dense,
    Rnvp,
    Factorized,
}

impl PreconditionerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "diagonal" => Ok(Self::Diagonal),
            "dense" => Ok(Self::Dense),
            "rnvp" => Ok(Self::Rnvp),
            "factorized" | "f-rnvp" => Ok(Self::Factorized),
            other => Err(Error::UnknownVariant(format!("preconditioner {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Diagonal => "diagonal",
            Self::Dense => "dense",
            Self::Rnvp => "rnvp",
            Self::Factorized => "factorized",
        }
    }
}

/// Named flat parameter block, for serializing fitted preconditioners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Preconditioner {
    Identity { dim: usize },
    Linear { map: LinearGaussian, diagonal: bool },
    Rnvp(Rnvp),
    Factorized(FactorizedPreconditioner),
}

impl Preconditioner {
    pub fn identity(dim: usize) -> Self {
        Preconditioner::Identity { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            Preconditioner::Identity { dim } => *dim,
            Preconditioner::Linear { map, .. } => map.dim(),
            Preconditioner::Rnvp(f) => f.dim,
            Preconditioner::Factorized(f) => f.dim,
        }
    }

    pub fn kind(&self) -> PreconditionerKind {
        match self {
            Preconditioner::Identity { .. } => PreconditionerKind::Identity,
            Preconditioner::Linear { diagonal: true, .. } => PreconditionerKind::Diagonal,
            Preconditioner::Linear { .. } => PreconditionerKind::Dense,
            Preconditioner::Rnvp(_) => PreconditionerKind::Rnvp,
            Preconditioner::Factorized(_) => PreconditionerKind::Factorized,
        }
    }

    /// Target space to latent space, z = f(x).
    pub fn to_latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Preconditioner::Identity { .. } => Ok(x.to_vec()),
            Preconditioner::Linear { map, .. } => Ok(map.forward(x, &[])?.0),
            Preconditioner::Rnvp(f) => Ok(f.forward(x, &[])?.0),
            Preconditioner::Factorized(f) => Ok(f.forward(x, &[])?.0),
        }
    }

    /// Latent space to target space, x = f^-1(z).
    pub fn to_target(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Preconditioner::Identity { .. } => Ok(z.to_vec()),
            Preconditioner::Linear { map, .. } => Ok(map.inverse(z, &[])?.0),
            Preconditioner::Rnvp(f) => Ok(f.inverse(z, &[])?.0),
            Preconditioner::Factorized(f) => Ok(f.inverse(z, &[])?.0),
        }
    }

    /// Pulled-back log-density and its gradient at latent point z, plus
    /// the target-space point. A non-finite inverse or target density
    /// yields -inf (with a zero gradient) so samplers reject the move.
    pub fn latent_logpdf_grad(
        &self,
        target: &dyn Target,
        z: &[f64],
    ) -> (f64, Vec<f64>, Vec<f64>) {
        match self.latent_logpdf_grad_inner(target, z) {
            Ok(v) => v,
            Err(_) => (f64::NEG_INFINITY, vec![0.0; z.len()], vec![f64::NAN; z.len()]),
        }
    }

    fn latent_logpdf_grad_inner(
        &self,
        target: &dyn Target,
        z: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let out = match self {
            Preconditioner::Identity { .. } => {
                let (lp, grad) = target.log_density_grad(z);
                (lp, grad, z.to_vec())
            }
            Preconditioner::Linear { map, .. } => {
                let (x, ld) = map.inverse(z, &[])?;
                let (lp, xbar) = target.log_density_grad(&x);
                (lp + ld, map.chol.matvec_t(&xbar), x)
            }
            Preconditioner::Rnvp(flow) => {
                let trace = flow.inverse_traced(z, &[])?;
                let (lp, xbar) = target.log_density_grad(&trace.x);
                let (zbar, _) = flow.inverse_vjp(&trace, &[], &xbar, 1.0);
                (lp + trace.log_det, zbar, trace.x.clone())
            }
            Preconditioner::Factorized(fp) => {
                let g_len = fp.g_len();
                let mut ld = 0.0;
                let xg = match &fp.gaussian {
                    Some(lin) => {
                        let (xg, l) = lin.inverse(&z[..g_len], &[])?;
                        ld += l;
                        xg
                    }
                    None => Vec::new(),
                };
                let (xh, trace) = match &fp.conditional {
                    Some(flow) => {
                        let trace = flow.inverse_traced(&z[g_len..], &xg)?;
                        ld += trace.log_det;
                        (trace.x.clone(), Some(trace))
                    }
                    None => (Vec::new(), None),
                };
                let x = fp.merge_row(&xg, &xh);
                let (lp, xbar) = target.log_density_grad(&x);
                let mut xbar_g: Vec<f64> =
                    fp.report.gaussian_set.iter().map(|&i| xbar[i]).collect();
                let xbar_h: Vec<f64> =
                    fp.report.complement_set.iter().map(|&i| xbar[i]).collect();
                let mut grad = Vec::with_capacity(z.len());
                let zbar_h = match (&fp.conditional, trace) {
                    (Some(flow), Some(trace)) => {
                        let (zbar_h, ctx_bar) = flow.inverse_vjp(&trace, &xg, &xbar_h, 1.0);
                        for (g, c) in xbar_g.iter_mut().zip(&ctx_bar) {
                            *g += c;
                        }
                        zbar_h
                    }
                    _ => Vec::new(),
                };
                if let Some(lin) = &fp.gaussian {
                    grad.extend(lin.chol.matvec_t(&xbar_g));
                }
                grad.extend(zbar_h);
                (lp + ld, grad, x)
            }
        };
        if !out.0.is_finite() || out.1.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "latent log-density".into(),
            });
        }
        Ok(out)
    }

    /// Named parameter blocks for persistence/inspection.
    pub fn param_slices(&self) -> Vec<ParamSlice> {
        fn linear_slices(prefix: &str, map: &LinearGaussian, out: &mut Vec<ParamSlice>) {
            out.push(ParamSlice {
                name: format!("{prefix}.mean"),
                values: map.mean.clone(),
            });
            out.push(ParamSlice {
                name: format!("{prefix}.cholesky"),
                values: map.chol.data.clone(),
            });
        }
        fn rnvp_slices(prefix: &str, flow: &Rnvp, out: &mut Vec<ParamSlice>) {
            for (i, layer) in flow.layers.iter().enumerate() {
                match layer {
                    Layer::ActNorm(a) => {
                        out.push(ParamSlice {
                            name: format!("{prefix}.layer{i}.actnorm.log_scale"),
                            values: a.log_scale.clone(),
                        });
                        out.push(ParamSlice {
                            name: format!("{prefix}.layer{i}.actnorm.shift"),
                            values: a.shift.clone(),
                        });
                    }
                    Layer::Coupling(c) => {
                        out.push(ParamSlice {
                            name: format!("{prefix}.layer{i}.coupling.w"),
                            values: c.w.clone(),
                        });
                        out.push(ParamSlice {
                            name: format!("{prefix}.layer{i}.coupling.bias"),
                            values: c.bias.clone(),
                        });
                    }
                    Layer::Reverse => {}
                }
            }
        }
        let mut out = Vec::new();
        match self {
            Preconditioner::Identity { .. } => {}
            Preconditioner::Linear { map, .. } => linear_slices("linear", map, &mut out),
            Preconditioner::Rnvp(flow) => rnvp_slices("rnvp", flow, &mut out),
            Preconditioner::Factorized(fp) => {
                out.push(ParamSlice {
                    name: "gaussian_set".into(),
                    values: fp.report.gaussian_set.iter().map(|&i| i as f64).collect(),
                });
                if let Some(lin) = &fp.gaussian {
                    linear_slices("gaussian", lin, &mut out);
                }
                if let Some(flow) = &fp.conditional {
                    rnvp_slices("conditional", flow, &mut out);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::factorized::build_factorized;
    use crate::flows::linear::dense_fit;
    use crate::flows::rnvp::rnvp_build;
    use crate::targets::Funnel;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn fd_latent_grad(p: &Preconditioner, target: &dyn Target, z: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let f = |z: &[f64]| -> f64 {
            let x = p.to_target(z).unwrap();
            let mut lp = target.log_density(&x);
            // Add the inverse log-det via the bijection directly.
            lp += match p {
                Preconditioner::Identity { .. } => 0.0,
                Preconditioner::Linear { map, .. } => map.inverse(z, &[]).unwrap().1,
                Preconditioner::Rnvp(fl) => fl.inverse(z, &[]).unwrap().1,
                Preconditioner::Factorized(fp) => fp.inverse(z, &[]).unwrap().1,
            };
            lp
        };
        (0..z.len())
            .map(|k| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[k] += h;
                zm[k] -= h;
                (f(&zp) - f(&zm)) / (2.0 * h)
            })
            .collect()
    }

    fn check_against_fd(p: &Preconditioner, seed: u64) {
        let target = Funnel::with_dim(p.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let z: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let (_, grad, _) = p.latent_logpdf_grad(&target, &z);
            let fd = fd_latent_grad(p, &target, &z);
            for (a, b) in grad.iter().zip(&fd) {
                assert!(
                    (a - b).abs() < 1e-4 * (1.0 + b.abs()),
                    "{} analytic {a} vs fd {b}",
                    p.kind().name()
                );
            }
        }
    }

    fn funnel_draws(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
                let mut row = vec![v];
                let s = (v / 2.0).exp();
                for _ in 1..dim {
                    row.push(rng.sample::<f64, _>(StandardNormal) * s);
                }
                row
            })
            .collect()
    }

    #[test]
    fn identity_gradient_is_target_gradient() {
        let p = Preconditioner::identity(5);
        let target = Funnel::with_dim(5);
        let z = vec![0.4, -0.2, 0.9, 0.0, -1.1];
        let (lp, grad, x) = p.latent_logpdf_grad(&target, &z);
        let (lp2, grad2) = target.log_density_grad(&z);
        assert_eq!(lp, lp2);
        assert_eq!(grad, grad2);
        assert_eq!(x, z);
    }

    #[test]
    fn linear_gradient_matches_fd() {
        let draws = funnel_draws(2000, 4, 1);
        let map = dense_fit(&draws).unwrap();
        check_against_fd(
            &Preconditioner::Linear {
                map,
                diagonal: false,
            },
            2,
        );
    }

    #[test]
    fn rnvp_gradient_matches_fd() {
        let mut flow = rnvp_build(4, 0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params: Vec<f64> = (0..flow.n_params())
            .map(|_| rng.gen_range(-0.3..0.3))
            .collect();
        flow.set_params(&params);
        for layer in flow.layers.iter_mut() {
            if let crate::flows::rnvp::Layer::ActNorm(a) = layer {
                a.initialized = true;
            }
        }
        check_against_fd(&Preconditioner::Rnvp(flow), 4);
    }

    #[test]
    fn factorized_gradient_matches_fd() {
        let draws = funnel_draws(4000, 4, 5);
        let mut fp = build_factorized(&draws, 0.1).unwrap();
        assert!(
            !fp.report.gaussian_set.is_empty() && !fp.report.complement_set.is_empty(),
            "test needs a genuine split, got G={:?}",
            fp.report.gaussian_set
        );
        let flow = fp.conditional.as_mut().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params: Vec<f64> = (0..flow.n_params())
            .map(|_| rng.gen_range(-0.3..0.3))
            .collect();
        flow.set_params(&params);
        for layer in flow.layers.iter_mut() {
            if let crate::flows::rnvp::Layer::ActNorm(a) = layer {
                a.initialized = true;
            }
        }
        check_against_fd(&Preconditioner::Factorized(fp), 7);
    }

    #[test]
    fn non_finite_target_maps_to_neg_inf() {
        let p = Preconditioner::identity(2);
        struct Bad;
        impl Target for Bad {
            fn dim(&self) -> usize {
                2
            }
            fn name(&self) -> &'static str {
                "bad"
            }
            fn log_density(&self, _x: &[f64]) -> f64 {
                f64::NAN
            }
            fn log_density_grad(&self, _x: &[f64]) -> (f64, Vec<f64>) {
                (f64::NAN, vec![0.0, 0.0])
            }
        }
        let (lp, grad, _) = p.latent_logpdf_grad(&Bad, &[0.0, 0.0]);
        assert_eq!(lp, f64::NEG_INFINITY);
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn kind_parsing_round_trips() {
        for k in ["identity", "diagonal", "dense", "rnvp", "factorized"] {
            assert_eq!(PreconditionerKind::parse(k).unwrap().name(), k);
        }
        assert!(PreconditionerKind::parse("nope").is_err());
    }
}
