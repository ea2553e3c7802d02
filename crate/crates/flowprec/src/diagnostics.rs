//! Draw-quality metrics: rank-normalized bulk/tail effective sample size
//! (split chains, Geyer initial-monotone truncation) and subsampled
//! kernelized Stein discrepancy.
//!
//! Note on KSD: on strongly funnel-shaped posteriors KSD can stay close
//! to the well-mixed value even when chains are stuck in the neck, so it
//! should be read alongside tail ESS rather than on its own.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::inv_phi;

/// Per-dimension ESS summary over a chains x steps x dims array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EssReport {
    pub bulk: Vec<f64>,
    pub tail: Vec<f64>,
    pub min_bulk: f64,
    pub min_tail: f64,
    pub chains: usize,
    pub steps: usize,
}

/// Average ranks (ties share the mean rank), 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pooled rank-normalization: average ranks mapped through
/// Phi^-1((r - 3/8) / (N + 1/4)).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let ranks = average_ranks(&pooled);
    let n = pooled.len() as f64;
    let mut z = Vec::with_capacity(chains.len());
    let mut off = 0;
    for chain in chains {
        z.push(
            ranks[off..off + chain.len()]
                .iter()
                .map(|&r| inv_phi((r - 0.375) / (n + 0.25)))
                .collect(),
        );
        off += chain.len();
    }
    z
}

fn split_in_half(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for chain in chains {
        let half = chain.len() / 2;
        out.push(chain[..half].to_vec());
        // Drop the middle draw of odd-length chains.
        out.push(chain[chain.len() - half..].to_vec());
    }
    out
}

/// Multi-chain ESS with Geyer initial-monotone truncation, on
/// already-transformed chains of equal length.
fn ess_core(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n =
        means.iter().map(|&mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0).max(1.0);
    let var_plus = w * (n as f64 - 1.0) / n as f64 + b_over_n;
    if !(var_plus > 0.0) {
        return 0.0;
    }

    let acov = |t: usize| -> f64 {
        let mut acc = 0.0;
        for (chain, &mu) in chains.iter().zip(&means) {
            let mut s = 0.0;
            for i in 0..n - t {
                s += (chain[i] - mu) * (chain[i + t] - mu);
            }
            acc += s / n as f64;
        }
        acc / m as f64
    };

    let rho = |t: usize| -> f64 { 1.0 - (w - acov(t)) / var_plus };

    // Geyer: paired sums Gamma_k = rho_{2k} + rho_{2k+1} (rho_0 = 1),
    // truncated at the first non-positive pair and forced monotone
    // non-increasing.
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0usize;
    while t + 1 < n {
        let g = rho(t) + rho(t + 1);
        if g <= 0.0 {
            break;
        }
        let g = g.min(prev);
        tau += 2.0 * g;
        prev = g;
        t += 2;
    }
    let mn = (m * n) as f64;
    if tau <= 0.0 {
        mn
    } else {
        mn / tau
    }
}

/// Rank-normalized bulk ESS of one scalar quantity given per-chain draws.
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    let split = split_in_half(chains);
    if split.iter().any(|c| c.len() < 2) {
        return 0.0;
    }
    ess_core(&rank_normalize(&split))
}

fn pooled_quantile(chains: &[Vec<f64>], q: f64) -> f64 {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (pooled.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    pooled[lo] * (1.0 - frac) + pooled[hi] * frac
}

/// Tail ESS: the smaller of the indicator ESS at the pooled 5% and 95%
/// quantiles.
pub fn tail_ess(chains: &[Vec<f64>]) -> f64 {
    [0.05, 0.95]
        .iter()
        .map(|&q| {
            let cut = pooled_quantile(chains, q);
            let indicators: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| {
                    c.iter()
                        .map(|&v| if v <= cut { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            bulk_ess(&indicators)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Per-dimension bulk and tail ESS over draws[chain][step][dim].
pub fn ess_report(draws: &[Vec<Vec<f64>>]) -> Result<EssReport> {
    if draws.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "ess needs >= 2 chains, got {}",
            draws.len()
        )));
    }
    let steps = draws[0].len();
    if steps < 4 || draws.iter().any(|c| c.len() != steps) {
        return Err(Error::DegenerateInput(
            "ess needs >= 4 equal-length steps per chain".into(),
        ));
    }
    let dim = draws[0][0].len();
    let mut bulk = Vec::with_capacity(dim);
    let mut tail = Vec::with_capacity(dim);
    for j in 0..dim {
        let chains: Vec<Vec<f64>> = draws
            .iter()
            .map(|c| c.iter().map(|row| row[j]).collect())
            .collect();
        let constant = chains
            .iter()
            .flatten()
            .all(|&v| v == chains[0][0]);
        if constant {
            eprintln!("warning: dimension {j} is constant; ESS reported as 0");
            bulk.push(0.0);
            tail.push(0.0);
            continue;
        }
        bulk.push(bulk_ess(&chains));
        tail.push(tail_ess(&chains));
    }
    let min_bulk = bulk.iter().copied().fold(f64::INFINITY, f64::min);
    let min_tail = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EssReport {
        bulk,
        tail,
        min_bulk,
        min_tail,
        chains: draws.len(),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsdKernel {
    Rbf,
    Imq,
}

impl KsdKernel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KsdKernel::Rbf),
            "imq" => Ok(KsdKernel::Imq),
            other => Err(Error::UnknownVariant(format!("ksd kernel {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsdEstimate {
    pub value: f64,
    pub subsample_size: usize,
    pub trials: usize,
    pub kernel: KsdKernel,
    /// Mean median-heuristic bandwidth across trials.
    pub bandwidth: f64,
}

pub const KSD_TRIALS: usize = 150;
pub const KSD_SUBSAMPLE: usize = 250;

const IMQ_BETA: f64 = -0.5;
const IMQ_OFFSET: f64 = 1.0;

/// Stein kernel u_p(x, y) for the given base kernel with bandwidth h.
fn stein_u(kernel: KsdKernel, x: &[f64], y: &[f64], sx: &[f64], sy: &[f64], h: f64) -> f64 {
    let d = x.len() as f64;
    let h2 = h * h;
    let mut r2 = 0.0;
    let mut diff_dot = 0.0; // (x - y) . (sx - sy)
    let mut ss = 0.0; // sx . sy
    for i in 0..x.len() {
        let dxy = x[i] - y[i];
        r2 += dxy * dxy;
        diff_dot += dxy * (sx[i] - sy[i]);
        ss += sx[i] * sy[i];
    }
    match kernel {
        KsdKernel::Rbf => {
            let k = (-r2 / (2.0 * h2)).exp();
            k * ss + k / h2 * diff_dot + k * (d / h2 - r2 / (h2 * h2))
        }
        KsdKernel::Imq => {
            let b = IMQ_BETA;
            let s = IMQ_OFFSET * IMQ_OFFSET + r2 / h2;
            let k = s.powf(b);
            let k1 = b * s.powf(b - 1.0); // d k / d s
            let trace =
                -4.0 * b * (b - 1.0) * s.powf(b - 2.0) * r2 / (h2 * h2) - 2.0 * d * k1 / h2;
            k * ss - 2.0 * k1 / h2 * diff_dot + trace
        }
    }
}

fn median_distance(points: &[&[f64]]) -> f64 {
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let r2: f64 = points[i]
                .iter()
                .zip(points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(r2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let med = if m % 2 == 0 {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    } else {
        dists[m / 2]
    };
    med.max(1e-12)
}

/// Subsampled KSD: the mean over `trials` of the square-root V-statistic
/// on `subsample` draws taken uniformly without replacement, with a
/// median-heuristic bandwidth per trial.
pub fn ksd_with(
    draws: &[Vec<f64>],
    score_fn: &dyn Fn(&[f64]) -> Vec<f64>,
    kernel: KsdKernel,
    trials: usize,
    subsample: usize,
    seed: u64,
) -> Result<KsdEstimate> {
    if draws.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "ksd needs >= 2 draws, got {}",
            draws.len()
        )));
    }
    let m = subsample.min(draws.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut bw_total = 0.0;
    for _ in 0..trials {
        let idx = rand::seq::index::sample(&mut rng, draws.len(), m);
        let points: Vec<&[f64]> = idx.iter().map(|i| draws[i].as_slice()).collect();
        let scores: Vec<Vec<f64>> = points.iter().map(|p| score_fn(p)).collect();
        let h = median_distance(&points);
        let mut v = 0.0;
        for i in 0..m {
            for j in 0..m {
                v += stein_u(kernel, points[i], points[j], &scores[i], &scores[j], h);
            }
        }
        v /= (m * m) as f64;
        total += v.max(0.0).sqrt();
        bw_total += h;
    }
    Ok(KsdEstimate {
        value: total / trials as f64,
        subsample_size: m,
        trials,
        kernel,
        bandwidth: bw_total / trials as f64,
    })
}

pub fn ksd(
    draws: &[Vec<f64>],
    score_fn: &dyn Fn(&[f64]) -> Vec<f64>,
    kernel: KsdKernel,
    seed: u64,
) -> Result<KsdEstimate> {
    ksd_with(draws, score_fn, kernel, KSD_TRIALS, KSD_SUBSAMPLE, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid_chains(k: usize, t: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| (0..t).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn iid_bulk_ess_near_total() {
        let chains = iid_chains(4, 2500, 1);
        let ess = bulk_ess(&chains);
        assert!((ess - 10_000.0).abs() < 1_000.0, "ess {ess}");
    }

    #[test]
    fn ar1_ess_matches_analytic_ratio() {
        let rho = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..5000)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        x = rho * x + (1.0f64 - rho * rho).sqrt() * e;
                        x
                    })
                    .collect()
            })
            .collect();
        let ess = bulk_ess(&chains);
        let expect = 20_000.0 * (1.0 - rho) / (1.0 + rho);
        assert!(
            (ess - expect).abs() < 0.15 * expect,
            "ess {ess} vs {expect}"
        );
    }

    #[test]
    fn constant_dimension_reports_zero() {
        let draws = vec![vec![vec![1.0]; 100], vec![vec![1.0]; 100]];
        let report = ess_report(&draws).unwrap();
        assert_eq!(report.bulk, vec![0.0]);
        assert_eq!(report.tail, vec![0.0]);
    }

    #[test]
    fn ess_invariant_under_monotone_transform() {
        let chains = iid_chains(4, 500, 3);
        let transformed: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|v| v.exp()).collect())
            .collect();
        assert_eq!(bulk_ess(&chains), bulk_ess(&transformed));
    }

    #[test]
    fn iid_tail_ess_near_total() {
        let chains = iid_chains(4, 2500, 4);
        let ess = tail_ess(&chains);
        assert!((ess - 10_000.0).abs() < 2_000.0, "tail ess {ess}");
    }

    #[test]
    fn sticky_tails_crater_tail_ess() {
        // IID draws rearranged so every chain visits the upper tail in
        // one contiguous run: marginals (and pooled quantiles) are
        // untouched, but the 95% indicator mixes catastrophically.
        let chains: Vec<Vec<f64>> = iid_chains(4, 2000, 5)
            .into_iter()
            .map(|chain| {
                let (mut low, high): (Vec<f64>, Vec<f64>) =
                    chain.into_iter().partition(|&v| v <= 1.6449);
                let mid = low.len() / 2;
                let mut out = low.split_off(mid);
                out.extend(high);
                out.extend(low);
                out
            })
            .collect();
        let tail = tail_ess(&chains);
        let bulk = bulk_ess(&chains);
        assert!(tail < bulk * 0.5, "tail {tail} vs bulk {bulk}");
    }

    fn std_normal_score(x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| -v).collect()
    }

    #[test]
    fn ksd_prefers_true_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                vec![
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        let shifted = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| -(v - 1.0)).collect() };
        let mut wins = 0;
        for seed in 0..20 {
            let good = ksd_with(&draws, &std_normal_score, KsdKernel::Rbf, 10, 250, seed)
                .unwrap()
                .value;
            let bad = ksd_with(&draws, &shifted, KsdKernel::Rbf, 10, 250, seed)
                .unwrap()
                .value;
            if good < bad {
                wins += 1;
            }
        }
        assert!(wins >= 19, "true score won only {wins}/20");
    }

    #[test]
    fn ksd_deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<Vec<f64>> = (0..600)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let a = ksd_with(&draws, &std_normal_score, KsdKernel::Imq, 5, 250, 42).unwrap();
        let b = ksd_with(&draws, &std_normal_score, KsdKernel::Imq, 5, 250, 42).unwrap();
        assert_eq!(a.value, b.value);
        assert!(a.value >= 0.0);
    }

    #[test]
    fn ksd_v_statistic_bias_shrinks_with_subsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<Vec<f64>> = (0..4000)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let small = ksd_with(&draws, &std_normal_score, KsdKernel::Rbf, 30, 50, 1)
            .unwrap()
            .value;
        let large = ksd_with(&draws, &std_normal_score, KsdKernel::Rbf, 30, 250, 1)
            .unwrap()
            .value;
        assert!(large < small, "250-subsample {large} vs 50-subsample {small}");
    }

    // IMQ Stein kernel against a finite-difference construction of
    // u_p(x, y) = s(x).k s(y) + s(x).grad_y k + s(y).grad_x k + trace.
    #[test]
    fn imq_stein_kernel_matches_finite_differences() {
        let x = vec![0.3, -0.7];
        let y = vec![1.1, 0.4];
        let sx = std_normal_score(&x);
        let sy = std_normal_score(&y);
        let h = 1.3;
        let k = |x: &[f64], y: &[f64]| -> f64 {
            let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (1.0 + r2 / (h * h)).powf(-0.5)
        };
        let e = 1e-5;
        let mut expect = k(&x, &y) * (sx[0] * sy[0] + sx[1] * sy[1]);
        for i in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += e;
            ym[i] -= e;
            expect += sx[i] * (k(&x, &yp) - k(&x, &ym)) / (2.0 * e);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += e;
            xm[i] -= e;
            expect += sy[i] * (k(&xp, &y) - k(&xm, &y)) / (2.0 * e);
            // trace term: d2 k / dx_i dy_i
            let mut xpyp = (x.clone(), y.clone());
            xpyp.0[i] += e;
            xpyp.1[i] += e;
            let mut xpym = (x.clone(), y.clone());
            xpym.0[i] += e;
            xpym.1[i] -= e;
            let mut xmyp = (x.clone(), y.clone());
            xmyp.0[i] -= e;
            xmyp.1[i] += e;
            let mut xmym = (x.clone(), y.clone());
            xmym.0[i] -= e;
            xmym.1[i] -= e;
            expect += (k(&xpyp.0, &xpyp.1) - k(&xpym.0, &xpym.1) - k(&xmyp.0, &xmyp.1)
                + k(&xmym.0, &xmym.1))
                / (4.0 * e * e);
        }
        let got = stein_u(KsdKernel::Imq, &x, &y, &sx, &sy, h);
        assert!((got - expect).abs() < 1e-5, "got {got} expect {expect}");
    }

    #[test]
    fn rbf_stein_kernel_matches_finite_differences() {
        let x = vec![0.5, -0.2, 0.9];
        let y = vec![-0.4, 0.8, 0.1];
        let sx = std_normal_score(&x);
        let sy = std_normal_score(&y);
        let h = 0.9;
        let k = |x: &[f64], y: &[f64]| -> f64 {
            let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / (2.0 * h * h)).exp()
        };
        let e = 1e-5;
        let mut expect = k(&x, &y) * sx.iter().zip(&sy).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..3 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += e;
            ym[i] -= e;
            expect += sx[i] * (k(&x, &yp) - k(&x, &ym)) / (2.0 * e);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += e;
            xm[i] -= e;
            expect += sy[i] * (k(&xp, &y) - k(&xm, &y)) / (2.0 * e);
            let (mut a, mut b) = (x.clone(), y.clone());
            a[i] += e;
            b[i] += e;
            let pp = k(&a, &b);
            let (mut a, mut b) = (x.clone(), y.clone());
            a[i] += e;
            b[i] -= e;
            let pm = k(&a, &b);
            let (mut a, mut b) = (x.clone(), y.clone());
            a[i] -= e;
            b[i] += e;
            let mp = k(&a, &b);
            let (mut a, mut b) = (x.clone(), y.clone());
            a[i] -= e;
            b[i] -= e;
            let mm = k(&a, &b);
            expect += (pp - pm - mp + mm) / (4.0 * e * e);
        }
        let got = stein_u(KsdKernel::Rbf, &x, &y, &sx, &sy, h);
        assert!((got - expect).abs() < 1e-5, "got {got} expect {expect}");
    }
}
