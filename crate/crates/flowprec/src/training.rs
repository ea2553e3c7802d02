//! Maximum-likelihood flow training: AdamW on the negative log-likelihood
//! under the standard-normal base, full-batch for small sample sets and
//! reshuffled minibatches beyond that.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::flows::rnvp::Rnvp;
use crate::math::LN_2PI;

/// Epoch losses above this are treated as divergence: training stops and
/// the best parameters seen so far are restored.
pub const DIVERGENCE_LOSS: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Minibatch size used when the sample count exceeds
    /// `full_batch_limit`.
    pub batch_size: usize,
    pub full_batch_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3500,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 1024,
            full_batch_limit: 4096,
        }
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -=
                self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub final_loss: f64,
    pub best_loss: f64,
    pub diverged: bool,
    /// Mean NLL per epoch.
    pub loss_trace: Vec<f64>,
}

/// One gradient evaluation: mean NLL of `batch` (with per-row context
/// `ctx`, empty slice of rows when the flow is unconditional) and its
/// parameter gradient.
fn batch_nll_grad(
    flow: &mut Rnvp,
    batch: &[Vec<f64>],
    ctx: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<f64> {
    let cache = flow.forward_batch_cached(batch, ctx)?;
    let n = batch.len() as f64;
    let dim = flow.dim as f64;
    let mut loss = 0.0;
    let mut z_bar = Vec::with_capacity(batch.len());
    for (z, ld) in cache.z.iter().zip(&cache.log_dets) {
        let quad: f64 = z.iter().map(|v| v * v).sum();
        loss += -(-0.5 * dim * LN_2PI - 0.5 * quad + ld);
        z_bar.push(z.iter().map(|v| v / n).collect::<Vec<f64>>());
    }
    let c = vec![-1.0 / n; batch.len()];
    grad.iter_mut().for_each(|g| *g = 0.0);
    flow.backward_batch(&cache, &z_bar, &c, ctx, grad);
    Ok(loss / n)
}

/// Train `flow` on `data` (rows) with optional per-row context. The
/// optimizer is taken by reference so callers can persist its moments
/// across refit cycles. Divergent or non-finite epochs restore the best
/// parameters seen and stop early.
pub fn fit_flow(
    flow: &mut Rnvp,
    data: &[Vec<f64>],
    ctx: &[Vec<f64>],
    cfg: &TrainConfig,
    opt: &mut AdamW,
    rng: &mut impl Rng,
) -> Result<FitReport> {
    assert!(ctx.is_empty() || ctx.len() == data.len());
    let full_batch = data.len() <= cfg.full_batch_limit;
    let mut grad = vec![0.0; flow.n_params()];
    let mut best_loss = f64::INFINITY;
    let mut best_params = flow.params();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut diverged = false;
    let mut indices: Vec<usize> = (0..data.len()).collect();

    'epochs: for _ in 0..cfg.epochs {
        let epoch_loss = if full_batch {
            match batch_nll_grad(flow, data, ctx, &mut grad) {
                Ok(loss) if loss.is_finite() && loss <= DIVERGENCE_LOSS => {
                    let mut params = flow.params();
                    opt.step(&mut params, &grad);
                    flow.set_params(&params);
                    loss
                }
                _ => {
                    diverged = true;
                    break 'epochs;
                }
            }
        } else {
            indices.shuffle(rng);
            let mut acc = 0.0;
            let mut seen = 0usize;
            for chunk in indices.chunks(cfg.batch_size) {
                let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| data[i].clone()).collect();
                let bctx: Vec<Vec<f64>> = if ctx.is_empty() {
                    Vec::new()
                } else {
                    chunk.iter().map(|&i| ctx[i].clone()).collect()
                };
                match batch_nll_grad(flow, &batch, &bctx, &mut grad) {
                    Ok(loss) if loss.is_finite() && loss <= DIVERGENCE_LOSS => {
                        let mut params = flow.params();
                        opt.step(&mut params, &grad);
                        flow.set_params(&params);
                        acc += loss * batch.len() as f64;
                        seen += batch.len();
                    }
                    _ => {
                        diverged = true;
                        break 'epochs;
                    }
                }
            }
            acc / seen as f64
        };
        loss_trace.push(epoch_loss);
        if epoch_loss < best_loss {
            best_loss = epoch_loss;
            best_params = flow.params();
        }
    }

    flow.set_params(&best_params);
    let final_loss = loss_trace.last().copied().unwrap_or(f64::INFINITY);
    Ok(FitReport {
        final_loss,
        best_loss,
        diverged,
        loss_trace,
    })
}
