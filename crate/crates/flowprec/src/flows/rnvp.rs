//! RNVP flow: ActNorm layers, reversal permutations, and affine couplings
//! with a single linear conditioner. Includes the hand-written backward
//! rules used for maximum-likelihood training and for latent-space
//! gradients during sampling.

use crate::error::{Error, Result};
use crate::flows::Bijection;
use crate::math::LN_2PI;

/// Clamp bound for predicted log-scales; wide enough to be inactive in
/// healthy training, tight enough to keep exp() from overflowing.
pub const LOG_ALPHA_CLAMP: f64 = 10.0;

const ACTNORM_STD_FLOOR: f64 = 1e-8;

/// Trainable elementwise affine map z = (x - shift) * exp(log_scale),
/// data-initialized to standardize its first training batch.
#[derive(Debug, Clone)]
pub struct ActNorm {
    pub log_scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub initialized: bool,
}

impl ActNorm {
    pub fn new(dim: usize) -> Self {
        ActNorm {
            log_scale: vec![0.0; dim],
            shift: vec![0.0; dim],
            initialized: false,
        }
    }

    pub fn initialize_from(&mut self, batch: &[Vec<f64>]) {
        let n = batch.len() as f64;
        let dim = self.shift.len();
        for j in 0..dim {
            let mean = batch.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = batch.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            self.shift[j] = mean;
            self.log_scale[j] = -var.sqrt().max(ACTNORM_STD_FLOOR).ln();
        }
        self.initialized = true;
    }

    fn forward_row(&self, x: &mut [f64]) -> f64 {
        let mut ld = 0.0;
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - self.shift[i]) * self.log_scale[i].exp();
            ld += self.log_scale[i];
        }
        ld
    }

    fn inverse_row(&self, z: &mut [f64]) -> f64 {
        let mut ld = 0.0;
        for (i, v) in z.iter_mut().enumerate() {
            *v = *v * (-self.log_scale[i]).exp() + self.shift[i];
            ld -= self.log_scale[i];
        }
        ld
    }
}

/// Affine coupling with a single linear conditioner. The input is split
/// into a pass-through block A (first ceil(d/2) coordinates; empty when
/// d = 1) and a transformed block B; the conditioner maps [x_A, ctx] to
/// (log alpha, beta).
#[derive(Debug, Clone)]
pub struct AffineCoupling {
    pub dim: usize,
    pub context_dim: usize,
    pub a_len: usize,
    pub b_len: usize,
    /// Row-major (a_len + context_dim) x (2 * b_len).
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineCoupling {
    pub fn new(dim: usize, context_dim: usize) -> Self {
        let (a_len, b_len) = if dim == 1 {
            (0, 1)
        } else {
            ((dim + 1) / 2, dim / 2)
        };
        AffineCoupling {
            dim,
            context_dim,
            a_len,
            b_len,
            w: vec![0.0; (a_len + context_dim) * 2 * b_len],
            bias: vec![0.0; 2 * b_len],
        }
    }

    fn in_len(&self) -> usize {
        self.a_len + self.context_dim
    }

    fn out_len(&self) -> usize {
        2 * self.b_len
    }

    /// raw = W^T [x_A, ctx] + bias; first b_len entries are unclamped
    /// log alpha, the rest beta.
    fn conditioner(&self, x: &[f64], ctx: &[f64]) -> Vec<f64> {
        let out = self.out_len();
        let mut raw = self.bias.clone();
        for (i, &u) in x[..self.a_len].iter().chain(ctx.iter()).enumerate() {
            let row = &self.w[i * out..(i + 1) * out];
            for (r, &wij) in raw.iter_mut().zip(row) {
                *r += u * wij;
            }
        }
        raw
    }

    fn forward_row(&self, x: &mut [f64], ctx: &[f64]) -> f64 {
        let raw = self.conditioner(x, ctx);
        let mut ld = 0.0;
        for j in 0..self.b_len {
            let a = raw[j].clamp(-LOG_ALPHA_CLAMP, LOG_ALPHA_CLAMP);
            let beta = raw[self.b_len + j];
            x[self.a_len + j] = a.exp() * x[self.a_len + j] + beta;
            ld += a;
        }
        ld
    }

    fn inverse_row(&self, z: &mut [f64], ctx: &[f64]) -> f64 {
        let raw = self.conditioner(z, ctx);
        let mut ld = 0.0;
        for j in 0..self.b_len {
            let a = raw[j].clamp(-LOG_ALPHA_CLAMP, LOG_ALPHA_CLAMP);
            let beta = raw[self.b_len + j];
            z[self.a_len + j] = (z[self.a_len + j] - beta) * (-a).exp();
            ld -= a;
        }
        ld
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    ActNorm(ActNorm),
    Coupling(AffineCoupling),
    Reverse,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::ActNorm(_) => "actnorm",
            Layer::Coupling(_) => "coupling",
            Layer::Reverse => "reverse",
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Layer::ActNorm(a) => 2 * a.shift.len(),
            Layer::Coupling(c) => c.w.len() + c.bias.len(),
            Layer::Reverse => 0,
        }
    }

    fn forward_row(&self, x: &mut [f64], ctx: &[f64]) -> f64 {
        match self {
            Layer::ActNorm(a) => a.forward_row(x),
            Layer::Coupling(c) => c.forward_row(x, ctx),
            Layer::Reverse => {
                x.reverse();
                0.0
            }
        }
    }

    fn inverse_row(&self, z: &mut [f64], ctx: &[f64]) -> f64 {
        match self {
            Layer::ActNorm(a) => a.inverse_row(z),
            Layer::Coupling(c) => c.inverse_row(z, ctx),
            Layer::Reverse => {
                z.reverse();
                0.0
            }
        }
    }

    /// Backward rule through the forward map. `x_in` is the layer's input
    /// row, `cot` holds the cotangent w.r.t. the layer output on entry and
    /// w.r.t. the layer input on exit, `c` is the cotangent of this row's
    /// log-det contribution, `pgrad` is this layer's flat gradient slice.
    fn backward_row(&self, x_in: &[f64], ctx: &[f64], cot: &mut [f64], c: f64, pgrad: &mut [f64]) {
        match self {
            Layer::ActNorm(an) => {
                let d = an.shift.len();
                let (gs, gb) = pgrad.split_at_mut(d);
                for i in 0..d {
                    let e = an.log_scale[i].exp();
                    let zbar = cot[i];
                    gs[i] += zbar * (x_in[i] - an.shift[i]) * e + c;
                    gb[i] += -zbar * e;
                    cot[i] = zbar * e;
                }
            }
            Layer::Coupling(cp) => {
                let raw = cp.conditioner(x_in, ctx);
                let out = cp.out_len();
                let (gw, gbias) = pgrad.split_at_mut(cp.w.len());
                let mut raw_bar = vec![0.0; out];
                for j in 0..cp.b_len {
                    let active = raw[j].abs() < LOG_ALPHA_CLAMP;
                    let a = raw[j].clamp(-LOG_ALPHA_CLAMP, LOG_ALPHA_CLAMP);
                    let e = a.exp();
                    let zbar_b = cot[cp.a_len + j];
                    if active {
                        raw_bar[j] = zbar_b * x_in[cp.a_len + j] * e + c;
                    }
                    raw_bar[cp.b_len + j] = zbar_b;
                    cot[cp.a_len + j] = zbar_b * e;
                }
                for (g, r) in gbias.iter_mut().zip(&raw_bar) {
                    *g += r;
                }
                for (i, &u) in x_in[..cp.a_len].iter().chain(ctx.iter()).enumerate() {
                    let grow = &mut gw[i * out..(i + 1) * out];
                    let wrow = &cp.w[i * out..(i + 1) * out];
                    if i < cp.a_len {
                        let mut ubar = 0.0;
                        for j in 0..out {
                            grow[j] += u * raw_bar[j];
                            ubar += wrow[j] * raw_bar[j];
                        }
                        cot[i] += ubar;
                    } else {
                        for j in 0..out {
                            grow[j] += u * raw_bar[j];
                        }
                    }
                }
            }
            Layer::Reverse => cot.reverse(),
        }
    }

    /// Backward rule through the inverse map. `z_in` is the inverse op's
    /// input row; `cot` holds the cotangent w.r.t. the op output on entry
    /// and w.r.t. the op input on exit; `c` multiplies the op's
    /// inverse-log-det derivative; context cotangent accumulates into
    /// `ctx_bar`.
    fn inverse_vjp_row(&self, z_in: &[f64], ctx: &[f64], cot: &mut [f64], c: f64, ctx_bar: &mut [f64]) {
        match self {
            Layer::ActNorm(an) => {
                for (i, v) in cot.iter_mut().enumerate() {
                    *v *= (-an.log_scale[i]).exp();
                }
            }
            Layer::Coupling(cp) => {
                let raw = cp.conditioner(z_in, ctx);
                let out = cp.out_len();
                let mut raw_bar = vec![0.0; out];
                for j in 0..cp.b_len {
                    let active = raw[j].abs() < LOG_ALPHA_CLAMP;
                    let a = raw[j].clamp(-LOG_ALPHA_CLAMP, LOG_ALPHA_CLAMP);
                    let em = (-a).exp();
                    let x_b = (z_in[cp.a_len + j] - raw[cp.b_len + j]) * em;
                    let xbar_b = cot[cp.a_len + j];
                    if active {
                        raw_bar[j] = -xbar_b * x_b - c;
                    }
                    raw_bar[cp.b_len + j] = -xbar_b * em;
                    cot[cp.a_len + j] = xbar_b * em;
                }
                for i in 0..cp.in_len() {
                    let wrow = &cp.w[i * out..(i + 1) * out];
                    let mut ubar = 0.0;
                    for j in 0..out {
                        ubar += wrow[j] * raw_bar[j];
                    }
                    if i < cp.a_len {
                        cot[i] += ubar;
                    } else {
                        ctx_bar[i - cp.a_len] += ubar;
                    }
                }
            }
            Layer::Reverse => cot.reverse(),
        }
    }
}

/// RNVP bijection: [ActNorm, coupling, reverse] blocks capped by a final
/// ActNorm, mapping target-space x to latent z in the forward direction.
#[derive(Debug, Clone)]
pub struct Rnvp {
    pub dim: usize,
    pub context_dim: usize,
    pub layers: Vec<Layer>,
}

/// Build the flow with `n_blocks` coupling blocks. All trainable
/// parameters start at zero so the initial map is the identity (until the
/// ActNorms self-initialize on the first training batch).
pub fn rnvp_build(dim: usize, context_dim: usize, n_blocks: usize) -> Result<Rnvp> {
    if dim == 0 {
        return Err(Error::DegenerateInput("rnvp dim must be >= 1".into()));
    }
    let mut layers = Vec::with_capacity(3 * n_blocks + 1);
    for _ in 0..n_blocks {
        layers.push(Layer::ActNorm(ActNorm::new(dim)));
        layers.push(Layer::Coupling(AffineCoupling::new(dim, context_dim)));
        layers.push(Layer::Reverse);
    }
    layers.push(Layer::ActNorm(ActNorm::new(dim)));
    Ok(Rnvp {
        dim,
        context_dim,
        layers,
    })
}

/// Per-layer batch inputs recorded during a cached forward pass.
pub struct ForwardCache {
    inputs: Vec<Vec<Vec<f64>>>,
    pub z: Vec<Vec<f64>>,
    pub log_dets: Vec<f64>,
}

/// Per-op inputs recorded during a traced inverse pass.
pub struct InverseTrace {
    /// inputs[k] is the row entering the k-th inverse op (ops run over
    /// layers in reverse order).
    inputs: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub log_det: f64,
}

impl Rnvp {
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            match layer {
                Layer::ActNorm(a) => {
                    out.extend_from_slice(&a.log_scale);
                    out.extend_from_slice(&a.shift);
                }
                Layer::Coupling(c) => {
                    out.extend_from_slice(&c.w);
                    out.extend_from_slice(&c.bias);
                }
                Layer::Reverse => {}
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut off = 0;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::ActNorm(a) => {
                    let d = a.log_scale.len();
                    a.log_scale.copy_from_slice(&params[off..off + d]);
                    a.shift.copy_from_slice(&params[off + d..off + 2 * d]);
                    off += 2 * d;
                }
                Layer::Coupling(c) => {
                    let wlen = c.w.len();
                    let blen = c.bias.len();
                    c.w.copy_from_slice(&params[off..off + wlen]);
                    c.bias.copy_from_slice(&params[off + wlen..off + wlen + blen]);
                    off += wlen + blen;
                }
                Layer::Reverse => {}
            }
        }
    }

    fn check_finite(row: &[f64], layer_idx: usize, kind: &str) -> Result<()> {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("layer {layer_idx} ({kind})"),
            });
        }
        Ok(())
    }

    /// Batch forward pass recording per-layer inputs; performs
    /// data-dependent ActNorm initialization on first use.
    pub fn forward_batch_cached(
        &mut self,
        batch: &[Vec<f64>],
        ctx: &[Vec<f64>],
    ) -> Result<ForwardCache> {
        let mut rows: Vec<Vec<f64>> = batch.to_vec();
        let mut log_dets = vec![0.0; rows.len()];
        let mut inputs = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::ActNorm(a) = layer {
                if !a.initialized {
                    a.initialize_from(&rows);
                }
            }
            inputs.push(rows.clone());
            for (r, row) in rows.iter_mut().enumerate() {
                let cx = if self.context_dim > 0 { &ctx[r][..] } else { &[] };
                log_dets[r] += layer.forward_row(row, cx);
                Self::check_finite(row, li, layer.kind())?;
            }
        }
        Ok(ForwardCache {
            inputs,
            z: rows,
            log_dets,
        })
    }

    /// Accumulate parameter gradients given per-row cotangents w.r.t. z
    /// (`z_bar`) and per-row cotangents of the log-det (`c`).
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        z_bar: &[Vec<f64>],
        c: &[f64],
        ctx: &[Vec<f64>],
        grad: &mut [f64],
    ) {
        assert_eq!(grad.len(), self.n_params());
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0usize, |acc, l| {
                let o = *acc;
                *acc += l.n_params();
                Some(o)
            })
            .collect();
        let mut cots: Vec<Vec<f64>> = z_bar.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let off = offsets[li];
            let np = layer.n_params();
            for (r, cot) in cots.iter_mut().enumerate() {
                let cx = if self.context_dim > 0 { &ctx[r][..] } else { &[] };
                layer.backward_row(
                    &cache.inputs[li][r],
                    cx,
                    cot,
                    c[r],
                    &mut grad[off..off + np],
                );
            }
        }
    }

    /// Inverse pass, recording per-op inputs for a later VJP.
    pub fn inverse_traced(&self, z: &[f64], ctx: &[f64]) -> Result<InverseTrace> {
        let mut row = z.to_vec();
        let mut log_det = 0.0;
        let mut inputs = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().rev().enumerate() {
            inputs.push(row.clone());
            log_det += layer.inverse_row(&mut row, ctx);
            Self::check_finite(&row, self.layers.len() - 1 - k, layer.kind())?;
        }
        Ok(InverseTrace {
            inputs,
            x: row,
            log_det,
        })
    }

    /// Backpropagate `x_bar + c * d(log_det_inv)` through a traced inverse
    /// pass; returns (z_bar, ctx_bar).
    pub fn inverse_vjp(
        &self,
        trace: &InverseTrace,
        ctx: &[f64],
        x_bar: &[f64],
        c: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut cot = x_bar.to_vec();
        let mut ctx_bar = vec![0.0; self.context_dim];
        let n_ops = self.layers.len();
        // Walk inverse ops backwards: op k applied layer (n-1-k).
        for k in (0..n_ops).rev() {
            let layer = &self.layers[n_ops - 1 - k];
            layer.inverse_vjp_row(&trace.inputs[k], ctx, &mut cot, c, &mut ctx_bar);
        }
        (cot, ctx_bar)
    }
}

impl Bijection for Rnvp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn context_dim(&self) -> usize {
        self.context_dim
    }

    fn forward(&self, x: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut row = x.to_vec();
        let mut ld = 0.0;
        for (li, layer) in self.layers.iter().enumerate() {
            ld += layer.forward_row(&mut row, ctx);
            Self::check_finite(&row, li, layer.kind())?;
        }
        Ok((row, ld))
    }

    fn inverse(&self, z: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut row = z.to_vec();
        let mut ld = 0.0;
        for (k, layer) in self.layers.iter().rev().enumerate() {
            ld += layer.inverse_row(&mut row, ctx);
            Self::check_finite(&row, k, layer.kind())?;
        }
        Ok((row, ld))
    }
}

/// Change-of-variables log-density: log N(f(x); 0, I) + log |det J_f(x)|.
pub fn flow_log_density(flow: &Rnvp, x: &[f64], ctx: &[f64]) -> Result<f64> {
    let (z, ld) = flow.forward(x, ctx)?;
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * flow.dim as f64 * LN_2PI - 0.5 * quad + ld)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randomized(dim: usize, ctx_dim: usize, seed: u64) -> Rnvp {
        let mut flow = rnvp_build(dim, ctx_dim, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..flow.n_params())
            .map(|_| rng.gen_range(-0.4..0.4))
            .collect();
        flow.set_params(&params);
        for layer in flow.layers.iter_mut() {
            if let Layer::ActNorm(a) = layer {
                a.initialized = true;
            }
        }
        flow
    }

    fn rand_row(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn identity_before_initialization() {
        let flow = rnvp_build(4, 0, 2).unwrap();
        let x = vec![0.3, -1.2, 2.5, 0.0];
        let (z, ld) = flow.forward(&x, &[]).unwrap();
        // Two reversals cancel; everything else starts at zero.
        assert_eq!(z, x);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn round_trip() {
        for dim in [1, 2, 5, 10] {
            let flow = randomized(dim, 0, 7 + dim as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            for _ in 0..20 {
                let x = rand_row(dim, &mut rng);
                let (z, ld_f) = flow.forward(&x, &[]).unwrap();
                let (x2, ld_i) = flow.inverse(&z, &[]).unwrap();
                for (a, b) in x.iter().zip(&x2) {
                    assert!((a - b).abs() < 1e-9, "dim {dim}: {a} vs {b}");
                }
                assert!((ld_f + ld_i).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_with_context() {
        let flow = randomized(3, 2, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = rand_row(3, &mut rng);
            let ctx = rand_row(2, &mut rng);
            let (z, ld_f) = flow.forward(&x, &ctx).unwrap();
            let (x2, ld_i) = flow.inverse(&z, &ctx).unwrap();
            for (a, b) in x.iter().zip(&x2) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((ld_f + ld_i).abs() < 1e-9);
        }
    }

    // Log-det must match the log|det| of the numerical Jacobian.
    #[test]
    fn log_det_matches_numerical_jacobian() {
        for dim in [1usize, 2, 3, 5] {
            let flow = randomized(dim, 0, 17 + dim as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let x = rand_row(dim, &mut rng);
            let (_, ld) = flow.forward(&x, &[]).unwrap();
            let h = 1e-6;
            let mut jac = vec![vec![0.0; dim]; dim];
            for j in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let (zp, _) = flow.forward(&xp, &[]).unwrap();
                let (zm, _) = flow.forward(&xm, &[]).unwrap();
                for i in 0..dim {
                    jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
                }
            }
            let det = log_abs_det(&mut jac);
            assert!(
                (ld - det).abs() < 1e-4,
                "dim {dim}: analytic {ld} vs numeric {det}"
            );
        }
    }

    fn log_abs_det(m: &mut [Vec<f64>]) -> f64 {
        let n = m.len();
        let mut ld = 0.0;
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&a, &b| m[a][k].abs().partial_cmp(&m[b][k].abs()).unwrap())
                .unwrap();
            m.swap(k, piv);
            ld += m[k][k].abs().ln();
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
            }
        }
        ld
    }

    // Parameter gradient of the per-batch NLL against central differences.
    #[test]
    fn training_backward_matches_finite_differences() {
        let dim = 3;
        let mut flow = randomized(dim, 2, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch: Vec<Vec<f64>> = (0..6).map(|_| rand_row(dim, &mut rng)).collect();
        let ctx: Vec<Vec<f64>> = (0..6).map(|_| rand_row(2, &mut rng)).collect();

        let nll = |flow: &mut Rnvp| -> f64 {
            let cache = flow.forward_batch_cached(&batch, &ctx).unwrap();
            let n = batch.len() as f64;
            cache
                .z
                .iter()
                .zip(&cache.log_dets)
                .map(|(z, ld)| {
                    let quad: f64 = z.iter().map(|v| v * v).sum();
                    -(-0.5 * dim as f64 * LN_2PI - 0.5 * quad + ld)
                })
                .sum::<f64>()
                / n
        };

        let cache = flow.forward_batch_cached(&batch, &ctx).unwrap();
        let n = batch.len() as f64;
        // d NLL / d z = z / n ; d NLL / d logdet = -1/n per row.
        let z_bar: Vec<Vec<f64>> = cache
            .z
            .iter()
            .map(|z| z.iter().map(|v| v / n).collect())
            .collect();
        let c = vec![-1.0 / n; batch.len()];
        let mut grad = vec![0.0; flow.n_params()];
        flow.backward_batch(&cache, &z_bar, &c, &ctx, &mut grad);

        let params = flow.params();
        let h = 1e-6;
        for k in (0..params.len()).step_by(7) {
            let mut pp = params.clone();
            pp[k] += h;
            flow.set_params(&pp);
            let fp = nll(&mut flow);
            pp[k] -= 2.0 * h;
            flow.set_params(&pp);
            let fm = nll(&mut flow);
            flow.set_params(&params);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (grad[k] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "param {k}: analytic {} vs fd {fd}",
                grad[k]
            );
        }
    }

    // Gradient of g(z) = logpi(f^-1(z)) + logdet through the inverse pass,
    // with a quadratic stand-in for logpi.
    #[test]
    fn inverse_vjp_matches_finite_differences() {
        let dim = 4;
        let ctx_dim = 3;
        let flow = randomized(dim, ctx_dim, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = rand_row(dim, &mut rng);
        let ctx = rand_row(ctx_dim, &mut rng);

        let quad = |x: &[f64]| -> f64 { -0.5 * x.iter().map(|v| v * v * 1.3).sum::<f64>() };
        let g = |z: &[f64], ctx: &[f64]| -> f64 {
            let (x, ld) = flow.inverse(z, ctx).unwrap();
            quad(&x) + ld
        };

        let trace = flow.inverse_traced(&z, &ctx).unwrap();
        let x_bar: Vec<f64> = trace.x.iter().map(|v| -1.3 * v).collect();
        let (z_bar, ctx_bar) = flow.inverse_vjp(&trace, &ctx, &x_bar, 1.0);

        let h = 1e-6;
        for k in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fd = (g(&zp, &ctx) - g(&zm, &ctx)) / (2.0 * h);
            assert!(
                (z_bar[k] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "z[{k}]: analytic {} vs fd {fd}",
                z_bar[k]
            );
        }
        for k in 0..ctx_dim {
            let mut cp = ctx.clone();
            let mut cm = ctx.clone();
            cp[k] += h;
            cm[k] -= h;
            let fd = (g(&z, &cp) - g(&z, &cm)) / (2.0 * h);
            assert!(
                (ctx_bar[k] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "ctx[{k}]: analytic {} vs fd {fd}",
                ctx_bar[k]
            );
        }
    }

    #[test]
    fn actnorm_standardizes_first_batch() {
        let mut flow = rnvp_build(2, 0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![5.0 + 2.0 * rng.gen_range(-1.0..1.0f64), rng.gen_range(-0.1..0.1)])
            .collect();
        let cache = flow.forward_batch_cached(&batch, &[]).unwrap();
        for j in 0..2 {
            let n = cache.z.len() as f64;
            let mean = cache.z.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = cache.z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-8, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn one_dimensional_coupling_uses_context_only() {
        let c = AffineCoupling::new(1, 2);
        assert_eq!(c.a_len, 0);
        assert_eq!(c.b_len, 1);
        assert_eq!(c.w.len(), 4);
        let flow = randomized(1, 2, 53);
        let (z1, _) = flow.forward(&[0.5], &[1.0, -1.0]).unwrap();
        let (z2, _) = flow.forward(&[0.5], &[-1.0, 1.0]).unwrap();
        assert!((z1[0] - z2[0]).abs() > 1e-9, "context must matter");
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(rnvp_build(0, 0, 2).is_err());
    }
}
