//! Threshold-calibration suite: the ten scalar test distributions used to
//! validate the Gaussianity heuristic, and the double-Gaussian-mixture
//! W2 curve as a function of component distance and sample size.

use rand::prelude::*;
use rand_distr::{Cauchy, Gamma, StandardNormal, StudentT};

use crate::error::Result;
use crate::gaussianity::w2_to_standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestDistribution {
    StdNormal,
    /// N(8, 2^2).
    ShiftedNormal,
    /// Equal mixture of N(0.15, 1) and N(-0.15, 1).
    NarrowMixture,
    /// Equal mixture of N(8, 2^2) and N(-8, 1).
    WideAsymmetricMixture,
    /// Equal mixture of N(3, 1) and N(-3, 1).
    WideMixture,
    /// Student's t with 1.5 degrees of freedom.
    StudentT15,
    /// Cauchy(1.5, 1.5).
    Cauchy15,
    /// Gamma(1.5, 1.5), shape-rate.
    Gamma15,
    /// x | y ~ N(0, exp(y)), y ~ N(0, 3^2).
    ConditionalScale,
    /// x | y ~ N((3/100) y^2 - 3, 1), y ~ N(0, 10^2).
    ConditionalQuadratic,
}

impl TestDistribution {
    pub fn name(&self) -> &'static str {
        match self {
            Self::StdNormal => "std_normal",
            Self::ShiftedNormal => "normal_8_2",
            Self::NarrowMixture => "mixture_0.15",
            Self::WideAsymmetricMixture => "mixture_8_asym",
            Self::WideMixture => "mixture_3",
            Self::StudentT15 => "student_t_1.5",
            Self::Cauchy15 => "cauchy_1.5_1.5",
            Self::Gamma15 => "gamma_1.5_1.5",
            Self::ConditionalScale => "cond_scale",
            Self::ConditionalQuadratic => "cond_quadratic",
        }
    }

    /// Ground-truth class in the calibration suite.
    pub fn is_gaussian(&self) -> bool {
        matches!(
            self,
            Self::StdNormal | Self::ShiftedNormal | Self::NarrowMixture
        )
    }

    pub fn all() -> [TestDistribution; 10] {
        [
            Self::StdNormal,
            Self::ShiftedNormal,
            Self::NarrowMixture,
            Self::WideAsymmetricMixture,
            Self::WideMixture,
            Self::StudentT15,
            Self::Cauchy15,
            Self::Gamma15,
            Self::ConditionalScale,
            Self::ConditionalQuadratic,
        ]
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let normal = |rng: &mut dyn RngCore| -> f64 { rng.sample(StandardNormal) };
        (0..n)
            .map(|_| match self {
                Self::StdNormal => normal(rng),
                Self::ShiftedNormal => 8.0 + 2.0 * normal(rng),
                Self::NarrowMixture => {
                    let sign = if rng.gen::<bool>() { 0.15 } else { -0.15 };
                    sign + normal(rng)
                }
                Self::WideAsymmetricMixture => {
                    if rng.gen::<bool>() {
                        8.0 + 2.0 * normal(rng)
                    } else {
                        -8.0 + normal(rng)
                    }
                }
                Self::WideMixture => {
                    let sign = if rng.gen::<bool>() { 3.0 } else { -3.0 };
                    sign + normal(rng)
                }
                Self::StudentT15 => rng.sample(StudentT::new(1.5).unwrap()),
                Self::Cauchy15 => rng.sample(Cauchy::new(1.5, 1.5).unwrap()),
                Self::Gamma15 => rng.sample(Gamma::new(1.5, 1.0 / 1.5).unwrap()),
                Self::ConditionalScale => {
                    let y = 3.0 * normal(rng);
                    (y / 2.0).exp() * normal(rng)
                }
                Self::ConditionalQuadratic => {
                    let y = 10.0 * normal(rng);
                    0.03 * y * y - 3.0 + normal(rng)
                }
            })
            .collect()
    }
}

/// Equal-weight mixture of N(-d/2, 1) and N(d/2, 1).
pub fn sample_double_mixture(d: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mu = if rng.gen::<bool>() { d / 2.0 } else { -d / 2.0 };
            mu + rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Mean and standard deviation of the W2 distance to N(0,1) over
/// `repeats` sampled double-mixture datasets.
pub fn mixture_w2_curve(
    d: f64,
    n: usize,
    repeats: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let mut values = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let xs = sample_double_mixture(d, n, rng);
        values.push(w2_to_standard_normal(&xs)?);
    }
    let mean = values.iter().sum::<f64>() / repeats as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussianity::gaussianity_threshold;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn suite_has_three_gaussian_members() {
        let gaussian = TestDistribution::all()
            .iter()
            .filter(|d| d.is_gaussian())
            .count();
        assert_eq!(gaussian, 3);
    }

    // Frozen W2 magnitudes from an independent oracle (scipy), n = 10^4:
    // gamma ~ 0.369, mixture_3 ~ 0.346, wide asymmetric mixture ~ 0.471,
    // t(1.5) ~ 1.07, N(0,1) ~ 0.013.
    #[test]
    fn w2_magnitudes_match_frozen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let check = |dist: TestDistribution, lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
            let w2 = w2_to_standard_normal(&dist.sample(n, rng)).unwrap();
            assert!(w2 > lo && w2 < hi, "{}: w2 {w2} not in ({lo}, {hi})", dist.name());
        };
        check(TestDistribution::StdNormal, 0.0, 0.03, &mut rng);
        check(TestDistribution::Gamma15, 0.30, 0.45, &mut rng);
        check(TestDistribution::WideMixture, 0.28, 0.42, &mut rng);
        check(TestDistribution::WideAsymmetricMixture, 0.40, 0.55, &mut rng);
        check(TestDistribution::StudentT15, 0.6, 2.5, &mut rng);
    }

    #[test]
    fn mixture_curve_grows_with_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m2, _) = mixture_w2_curve(2.0, 1000, 20, &mut rng).unwrap();
        let (m4, _) = mixture_w2_curve(4.0, 1000, 20, &mut rng).unwrap();
        let (m10, _) = mixture_w2_curve(10.0, 1000, 20, &mut rng).unwrap();
        assert!(m2 < m4 && m4 < m10, "{m2} {m4} {m10}");
    }

    // Appendix-level behavior: the d = 2 mixture passes at C = 0.1 while
    // d = 10 fails.
    #[test]
    fn d2_mixture_is_approximately_gaussian_d10_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let tau = gaussianity_threshold(0.1, n);
        let w2_d2 = w2_to_standard_normal(&sample_double_mixture(2.0, n, &mut rng)).unwrap();
        let w2_d10 = w2_to_standard_normal(&sample_double_mixture(10.0, n, &mut rng)).unwrap();
        assert!(w2_d2 < tau, "d=2: {w2_d2} vs tau {tau}");
        assert!(w2_d10 > tau, "d=10: {w2_d10} vs tau {tau}");
    }
}
