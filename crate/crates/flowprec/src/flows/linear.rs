//! Linear Gaussian maps: diagonal and dense (Cholesky) preconditioners and
//! the Gaussian block of the factorized model.

use crate::error::{Error, Result};
use crate::flows::Bijection;
use crate::math::LN_2PI;

const VARIANCE_FLOOR: f64 = 1e-12;

/// Lower-triangular matrix with positive diagonal, row-major storage.
#[derive(Debug, Clone)]
pub struct Chol {
    pub dim: usize,
    /// Row-major dim x dim; entries above the diagonal are zero.
    pub data: Vec<f64>,
}

impl Chol {
    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            data[i * dim + i] = d;
        }
        Chol { dim, data }
    }

    /// Cholesky factor of a symmetric positive-definite matrix; None when
    /// the factorization hits a non-positive pivot.
    pub fn factor(cov: &[f64], dim: usize) -> Option<Self> {
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = cov[i * dim + j];
                for k in 0..j {
                    sum -= l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return None;
                    }
                    l[i * dim + i] = sum.sqrt();
                } else {
                    l[i * dim + j] = sum / l[j * dim + j];
                }
            }
        }
        Some(Chol { dim, data: l })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim).map(|i| self.at(i, i).ln()).sum()
    }

    /// y = L x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.at(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// y = L^T x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for j in 0..self.dim {
            let mut acc = 0.0;
            for i in j..self.dim {
                acc += self.at(i, j) * x[i];
            }
            y[j] = acc;
        }
        y
    }

    /// Solve L y = b by forward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.at(i, j) * y[j];
            }
            y[i] = acc / self.at(i, i);
        }
        y
    }

    /// L L^T, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    acc += self.at(i, k) * self.at(j, k);
                }
                m[i * d + j] = acc;
            }
        }
        m
    }
}

/// Affine Gaussian map z = L^{-1}(x - mu). Serves both as a linear
/// preconditioner and as the Gaussian block of the factorized model.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    pub mean: Vec<f64>,
    pub chol: Chol,
    /// Set when a dense fit had to fall back to the diagonal.
    pub diagonal_fallback: bool,
}

impl LinearGaussian {
    pub fn identity(dim: usize) -> Self {
        LinearGaussian {
            mean: vec![0.0; dim],
            chol: Chol::diagonal(&vec![1.0; dim]),
            diagonal_fallback: false,
        }
    }

    /// log N(x | mu, L L^T).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let z = self.chol.solve(&centered);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * self.dim() as f64 * LN_2PI - self.chol.log_det() - 0.5 * quad
    }
}

impl Bijection for LinearGaussian {
    fn dim(&self) -> usize {
        self.chol.dim
    }

    fn forward(&self, x: &[f64], _ctx: &[f64]) -> Result<(Vec<f64>, f64)> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok((self.chol.solve(&centered), -self.chol.log_det()))
    }

    fn inverse(&self, z: &[f64], _ctx: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut x = self.chol.matvec(z);
        for (xi, mi) in x.iter_mut().zip(&self.mean) {
            *xi += mi;
        }
        Ok((x, self.chol.log_det()))
    }
}

fn column_means(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut mu = vec![0.0; dim];
    for row in samples {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n;
    }
    mu
}

/// Empirical covariance (1/n convention), row-major.
fn covariance(samples: &[Vec<f64>], mu: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let dim = mu.len();
    let mut cov = vec![0.0; dim * dim];
    for row in samples {
        for i in 0..dim {
            let di = row[i] - mu[i];
            for j in 0..=i {
                cov[i * dim + j] += di * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            cov[i * dim + j] /= n;
            cov[j * dim + i] = cov[i * dim + j];
        }
    }
    cov
}

/// Per-dimension mean/std affine map. Zero-variance dimensions are floored
/// at 1e-12 variance.
pub fn diagonal_fit(samples: &[Vec<f64>]) -> Result<LinearGaussian> {
    if samples.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "diagonal fit needs n >= 2, got {}",
            samples.len()
        )));
    }
    let mu = column_means(samples);
    let n = samples.len() as f64;
    let dim = mu.len();
    let mut stds = vec![0.0; dim];
    for (i, std) in stds.iter_mut().enumerate() {
        let var = samples.iter().map(|r| (r[i] - mu[i]).powi(2)).sum::<f64>() / n;
        *std = var.max(VARIANCE_FLOOR).sqrt();
    }
    Ok(LinearGaussian {
        mean: mu,
        chol: Chol::diagonal(&stds),
        diagonal_fallback: false,
    })
}

/// Full-covariance Cholesky affine map with jitter escalation: the
/// covariance diagonal is inflated by mean(diag) * f, f from 1e-9 up to
/// 1e-3 in decade steps, before giving up and falling back to the diagonal
/// fit.
pub fn dense_fit(samples: &[Vec<f64>]) -> Result<LinearGaussian> {
    fit_gaussian_block(samples)
}

/// Fit mean and Cholesky of the empirical covariance; shared by the dense
/// preconditioner and the factorized model's Gaussian block.
pub fn fit_gaussian_block(samples: &[Vec<f64>]) -> Result<LinearGaussian> {
    if samples.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "gaussian block fit needs n >= 2, got {}",
            samples.len()
        )));
    }
    let mu = column_means(samples);
    let dim = mu.len();
    let cov = covariance(samples, &mu);
    let mean_diag = (0..dim).map(|i| cov[i * dim + i]).sum::<f64>() / dim as f64;
    if let Some(chol) = Chol::factor(&cov, dim) {
        return Ok(LinearGaussian {
            mean: mu,
            chol,
            diagonal_fallback: false,
        });
    }
    let mut factor = 1e-9;
    while factor <= 1e-3 {
        let mut jittered = cov.clone();
        for i in 0..dim {
            jittered[i * dim + i] += mean_diag * factor;
        }
        if let Some(chol) = Chol::factor(&jittered, dim) {
            return Ok(LinearGaussian {
                mean: mu,
                chol,
                diagonal_fallback: false,
            });
        }
        factor *= 10.0;
    }
    // Diagonal fallback with floored variances.
    let stds: Vec<f64> = (0..dim)
        .map(|i| cov[i * dim + i].max(VARIANCE_FLOOR).sqrt())
        .collect();
    Ok(LinearGaussian {
        mean: mu,
        chol: Chol::diagonal(&stds),
        diagonal_fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn cholesky_reconstructs_known_matrix() {
        let cov = vec![4.0, 2.0, 2.0, 3.0];
        let l = Chol::factor(&cov, 2).unwrap();
        let rec = l.reconstruct();
        for (a, b) in rec.iter().zip(&cov) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((l.log_det() - 0.5 * (4.0f64 * 3.0 - 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn dense_logdet_of_known_scales() {
        let l = Chol::diagonal(&[2.0, 4.0]);
        assert!((l.log_det() - 8.0f64.ln()).abs() < 1e-12);
        assert!((l.log_det() - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn recover_known_2x2_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Sigma = [[2.0, 0.6], [0.6, 0.5]]
        let l_true = Chol::factor(&[2.0, 0.6, 0.6, 0.5], 2).unwrap();
        let samples: Vec<Vec<f64>> = (0..100_000)
            .map(|_| {
                let e = vec![
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ];
                l_true.matvec(&e)
            })
            .collect();
        let block = fit_gaussian_block(&samples).unwrap();
        let rec = block.chol.reconstruct();
        let expect = [2.0, 0.6, 0.6, 0.5];
        for (a, b) in rec.iter().zip(&expect) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn identical_rows_fall_back_to_diagonal() {
        let samples = vec![vec![1.0, 2.0]; 50];
        let block = fit_gaussian_block(&samples).unwrap();
        assert!(block.diagonal_fallback);
        let floor_std = VARIANCE_FLOOR.sqrt();
        assert!((block.chol.at(0, 0) - floor_std).abs() < 1e-15);
    }

    #[test]
    fn scalar_block_is_sample_std() {
        let samples: Vec<Vec<f64>> = vec![vec![1.0], vec![3.0], vec![5.0], vec![7.0]];
        let block = fit_gaussian_block(&samples).unwrap();
        let (_, std) = crate::math::mean_std(&[1.0, 3.0, 5.0, 7.0]);
        assert!((block.chol.at(0, 0) - std).abs() < 1e-12);
    }

    #[test]
    fn diagonal_fit_on_standardized_data_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples: Vec<Vec<f64>> = (0..5000)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)])
            .collect();
        // Standardize exactly.
        for j in 0..2 {
            let col: Vec<f64> = samples.iter().map(|r| r[j]).collect();
            let (m, s) = crate::math::mean_std(&col);
            for r in samples.iter_mut() {
                r[j] = (r[j] - m) / s;
            }
        }
        let map = diagonal_fit(&samples).unwrap();
        for j in 0..2 {
            assert!(map.mean[j].abs() < 1e-12);
            assert!((map.chol.at(j, j) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                vec![a * 2.0 + 1.0, a + b * 0.5]
            })
            .collect();
        let map = dense_fit(&samples).unwrap();
        for _ in 0..100 {
            let x = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let (z, ld_f) = map.forward(&x, &[]).unwrap();
            let (x2, ld_i) = map.inverse(&z, &[]).unwrap();
            for (a, b) in x.iter().zip(&x2) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((ld_f + ld_i).abs() < 1e-12);
        }
    }
}
