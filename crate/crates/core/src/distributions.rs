//! One-dimensional distributions used for priors, sampling designs, and
//! observation-noise likelihoods.
//!
//! Density math is delegated to statrs; every random draw goes through the
//! inverse CDF applied to a single uniform variate from our seeded stream, so
//! a `(seed, stream_id)` pair pins entire designs regardless of distribution
//! kind.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, LogNormal, Normal, Uniform};

use crate::error::Error;
use crate::numerics::RngStream;

/// Standard normal density.
pub fn standard_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_TAU: f64 = 0.3989422804014327;
    INV_SQRT_TAU * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal quantile function.
pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
    /// ln X ~ Normal(mu, sigma).
    LogNormal { mu: f64, sigma: f64 },
    /// Normal(mean, std) restricted to [low, high] and renormalized.
    TruncatedNormal { mean: f64, std: f64, low: f64, high: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            Dist::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::InvalidConfig(format!(
                        "uniform bounds must be finite with low < high, got [{low}, {high}]"
                    )));
                }
            }
            Dist::Normal { mean, std } => {
                if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
                    return Err(Error::NonPositiveParameter("normal std".into()));
                }
            }
            Dist::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
                    return Err(Error::NonPositiveParameter("log-normal sigma".into()));
                }
            }
            Dist::TruncatedNormal { mean, std, low, high } => {
                if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
                    return Err(Error::NonPositiveParameter("truncated normal std".into()));
                }
                if !(low < high) {
                    return Err(Error::InvalidConfig(format!(
                        "truncation bounds must satisfy low < high, got [{low}, {high}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Dist::Uniform { low, high } => {
                if x < low || x > high {
                    f64::NEG_INFINITY
                } else {
                    -(high - low).ln()
                }
            }
            Dist::Normal { mean, std } => {
                Normal::new(mean, std).expect("validated").ln_pdf(x)
            }
            Dist::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    LogNormal::new(mu, sigma).expect("validated").ln_pdf(x)
                }
            }
            Dist::TruncatedNormal { mean, std, low, high } => {
                if x < low || x > high {
                    return f64::NEG_INFINITY;
                }
                let n = Normal::new(mean, std).expect("validated");
                let mass = n.cdf(high) - n.cdf(low);
                n.ln_pdf(x) - mass.ln()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Dist::Uniform { low, high } => {
                Uniform::new(low, high).expect("validated").cdf(x)
            }
            Dist::Normal { mean, std } => Normal::new(mean, std).expect("validated").cdf(x),
            Dist::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated").cdf(x)
            }
            Dist::TruncatedNormal { mean, std, low, high } => {
                if x <= low {
                    return 0.0;
                }
                if x >= high {
                    return 1.0;
                }
                let n = Normal::new(mean, std).expect("validated");
                let lo = n.cdf(low);
                (n.cdf(x) - lo) / (n.cdf(high) - lo)
            }
        }
    }

    /// Quantile function for p in [0, 1].
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match *self {
            Dist::Uniform { low, high } => low + p * (high - low),
            Dist::Normal { mean, std } => {
                Normal::new(mean, std).expect("validated").inverse_cdf(p)
            }
            Dist::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated").inverse_cdf(p)
            }
            Dist::TruncatedNormal { mean, std, low, high } => {
                let n = Normal::new(mean, std).expect("validated");
                let lo = n.cdf(low);
                let mass = n.cdf(high) - lo;
                n.inverse_cdf((lo + p * mass).clamp(0.0, 1.0)).clamp(low, high)
            }
        }
    }

    /// Draws one sample by inverse-transform.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        self.inverse_cdf(rng.random_range(0.0..1.0))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Uniform { low, high } => 0.5 * (low + high),
            Dist::Normal { mean, .. } => mean,
            Dist::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Dist::TruncatedNormal { mean, std, low, high } => {
                let a = (low - mean) / std;
                let b = (high - mean) / std;
                let z = standard_normal_cdf(b) - standard_normal_cdf(a);
                mean + std * (standard_normal_pdf(a) - standard_normal_pdf(b)) / z
            }
        }
    }

    /// Support bounds (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Dist::Uniform { low, high } => (low, high),
            Dist::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Dist::LogNormal { .. } => (0.0, f64::INFINITY),
            Dist::TruncatedNormal { low, high, .. } => (low, high),
        }
    }
}

/// Validates a joint prior given as one independent distribution per
/// coordinate.
pub fn validate_priors(priors: &[Dist]) -> Result<(), Error> {
    if priors.is_empty() {
        return Err(Error::EmptyData("priors".into()));
    }
    priors.iter().try_for_each(Dist::validate)
}

/// Joint log density of independent coordinates; `-inf` if any coordinate is
/// outside its support.
pub fn joint_ln_pdf(priors: &[Dist], x: &[f64]) -> f64 {
    debug_assert_eq!(priors.len(), x.len());
    priors.iter().zip(x).map(|(d, v)| d.ln_pdf(*v)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_constants() {
        assert_relative_eq!(standard_normal_cdf(1.0), 0.8413447461, max_relative = 1e-9);
        assert_relative_eq!(standard_normal_pdf(1.0), 0.2419707245, max_relative = 1e-9);
        assert_relative_eq!(standard_normal_cdf(-2.0), 0.02275013, max_relative = 1e-6);
        assert_relative_eq!(standard_normal_quantile(0.975), 1.959964, max_relative = 1e-6);
    }

    #[test]
    fn uniform_round_trip() {
        let d = Dist::Uniform { low: -2.0, high: 6.0 };
        assert_relative_eq!(d.ln_pdf(0.0), -(8f64.ln()));
        assert_eq!(d.ln_pdf(7.0), f64::NEG_INFINITY);
        assert_relative_eq!(d.inverse_cdf(d.cdf(1.5)), 1.5, max_relative = 1e-12);
    }

    #[test]
    fn truncated_normal_renormalizes() {
        let d = Dist::TruncatedNormal { mean: 0.0, std: 1.0, low: -1.0, high: 1.0 };
        // Inside mass: Phi(1) - Phi(-1).
        let mass = standard_normal_cdf(1.0) - standard_normal_cdf(-1.0);
        assert_relative_eq!(d.ln_pdf(0.0), standard_normal_pdf(0.0).ln() - mass.ln(), max_relative = 1e-12);
        assert_eq!(d.ln_pdf(1.5), f64::NEG_INFINITY);
        assert_relative_eq!(d.cdf(1.0), 1.0, max_relative = 1e-12);
        assert_relative_eq!(d.cdf(0.0), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn truncated_normal_mean_is_shifted() {
        // One-sided truncation pushes the mean into the kept half.
        let d = Dist::TruncatedNormal { mean: 0.0, std: 1.0, low: 0.0, high: 50.0 };
        assert_relative_eq!(d.mean(), (2.0 / std::f64::consts::PI).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn sampling_stays_in_support() {
        let mut rng = RngStream::new(11, 0);
        let d = Dist::TruncatedNormal { mean: 2.0, std: 3.0, low: 0.0, high: 1.0 };
        for _ in 0..500 {
            let x = d.sample(&mut rng);
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn lognormal_positive_support() {
        let d = Dist::LogNormal { mu: 0.0, sigma: 1.0 };
        assert_eq!(d.ln_pdf(-0.1), f64::NEG_INFINITY);
        assert_relative_eq!(d.mean(), (0.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn joint_density_sums_coordinates() {
        let priors = vec![
            Dist::Uniform { low: 0.0, high: 1.0 },
            Dist::Normal { mean: 0.0, std: 1.0 },
        ];
        let expected = 0.0 + standard_normal_pdf(0.5).ln();
        assert_relative_eq!(joint_ln_pdf(&priors, &[0.5, 0.5]), expected, max_relative = 1e-12);
        assert_eq!(joint_ln_pdf(&priors, &[2.0, 0.0]), f64::NEG_INFINITY);
    }
}
