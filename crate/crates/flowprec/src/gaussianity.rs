//! Per-dimension approximate-Gaussianity classification.
//!
//! Each marginal of a sample matrix is standardized and compared to the
//! standard normal through the empirical 2-Wasserstein distance over order
//! statistics. Dimensions with distance at most tau = C + sqrt(2/n) are
//! treated as approximately Gaussian and handed to a linear preconditioner;
//! the rest go to the conditional flow.

use crate::error::{Error, Result};
use crate::math::{inv_phi, mean_std};
use serde::{Deserialize, Serialize};

/// Classification result for one sample matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianityReport {
    /// Per-dimension W2 distance to N(0,1). Constant columns carry +inf.
    pub w2: Vec<f64>,
    pub threshold: f64,
    /// Indices classified as approximately Gaussian, ascending.
    pub gaussian_set: Vec<usize>,
    /// Complement of `gaussian_set`, ascending.
    pub complement_set: Vec<usize>,
    pub n: usize,
    pub constant: f64,
    /// Columns that were constant (degenerate) and forced into H.
    pub degenerate: Vec<usize>,
}

impl GaussianityReport {
    pub fn dim(&self) -> usize {
        self.w2.len()
    }
}

/// tau = C + sqrt(2/n).
pub fn gaussianity_threshold(c: f64, n: usize) -> f64 {
    // Negative constants are allowed: a sufficiently negative C forces the
    // entire Gaussian set empty, which degrades the factorized flow to a
    // plain RNVP.
    assert!(n >= 1);
    c + (2.0 / n as f64).sqrt()
}

/// Empirical 2-Wasserstein distance between standardized samples and N(0,1).
///
/// Samples are standardized with the population (1/n) convention, sorted,
/// and matched against normal quantiles at psi = (i - 0.5)/n.
pub fn w2_to_standard_normal(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "w2 needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (mean, std) = mean_std(samples);
    if std == 0.0 || !std.is_finite() {
        return Err(Error::DegenerateInput(
            "zero or non-finite variance in w2 input".into(),
        ));
    }
    let mut xs: Vec<f64> = samples.iter().map(|x| (x - mean) / std).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    let mut acc = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let psi = (i as f64 + 0.5) / n as f64;
        let d = x - inv_phi(psi);
        acc += d * d;
    }
    Ok((acc / n as f64).sqrt())
}

/// Classify each column of a row-major n x d matrix.
///
/// Constant columns are assigned to the complement with a +inf sentinel
/// rather than failing the whole matrix.
pub fn classify_dimensions(samples: &[Vec<f64>], c: f64) -> Result<GaussianityReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "classification needs at least 2 rows, got {n}"
        )));
    }
    let dim = samples[0].len();
    let tau = gaussianity_threshold(c, n);
    let mut w2 = Vec::with_capacity(dim);
    let mut gaussian_set = Vec::new();
    let mut complement_set = Vec::new();
    let mut degenerate = Vec::new();
    let mut col = vec![0.0; n];
    for k in 0..dim {
        for (i, row) in samples.iter().enumerate() {
            col[i] = row[k];
        }
        match w2_to_standard_normal(&col) {
            Ok(d) => {
                w2.push(d);
                if d <= tau {
                    gaussian_set.push(k);
                } else {
                    complement_set.push(k);
                }
            }
            Err(Error::DegenerateInput(_)) => {
                w2.push(f64::INFINITY);
                complement_set.push(k);
                degenerate.push(k);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(GaussianityReport {
        w2,
        threshold: tau,
        gaussian_set,
        complement_set,
        n,
        constant: c,
        degenerate,
    })
}

/// Location/scale/shape decomposition of the squared empirical W2 between
/// two equal-or-unequal sample sets, on the quantile grid of the smaller set.
///
/// Returns ((mu_p - mu_q)^2, (sigma_p - sigma_q)^2,
/// 2 sigma_p sigma_q (1 - rho)) where rho is the Pearson correlation of
/// matched empirical quantiles.
pub fn w2_decomposition_check(p: &[f64], q: &[f64]) -> Result<(f64, f64, f64)> {
    let (qp, qq) = matched_quantiles(p, q)?;
    let (mp, sp) = mean_std(&qp);
    let (mq, sq) = mean_std(&qq);
    if sp == 0.0 || sq == 0.0 {
        return Err(Error::DegenerateInput(
            "zero variance in decomposition input".into(),
        ));
    }
    let n = qp.len() as f64;
    let mut cov = 0.0;
    for (a, b) in qp.iter().zip(&qq) {
        cov += (a - mp) * (b - mq);
    }
    cov /= n;
    let rho = cov / (sp * sq);
    let location = (mp - mq) * (mp - mq);
    let scale = (sp - sq) * (sp - sq);
    let shape = 2.0 * sp * sq * (1.0 - rho);
    Ok((location, scale, shape))
}

/// Squared empirical W2 between two sample sets on the common quantile grid.
pub fn w2_squared_empirical(p: &[f64], q: &[f64]) -> Result<f64> {
    let (qp, qq) = matched_quantiles(p, q)?;
    let n = qp.len() as f64;
    Ok(qp
        .iter()
        .zip(&qq)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Empirical quantiles of both sets at psi = (i - 0.5)/n of the smaller set.
fn matched_quantiles(p: &[f64], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::DegenerateInput("empty sample set".into()));
    }
    let n = p.len().min(q.len());
    let mut ps = p.to_vec();
    let mut qs = q.to_vec();
    ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let qp: Vec<f64> = grid.iter().map(|&psi| empirical_quantile(&ps, psi)).collect();
    let qq: Vec<f64> = grid.iter().map(|&psi| empirical_quantile(&qs, psi)).collect();
    Ok((qp, qq))
}

/// Piecewise-constant empirical quantile: the order statistic whose level
/// (i - 0.5)/n is nearest at or above psi.
fn empirical_quantile(sorted: &[f64], psi: f64) -> f64 {
    let n = sorted.len();
    let idx = (psi * n as f64 - 0.5).round();
    let idx = idx.clamp(0.0, (n - 1) as f64) as usize;
    sorted[idx]
}
