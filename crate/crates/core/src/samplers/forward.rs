//! Plain Monte Carlo and Latin hypercube designs over independent marginals.

use nalgebra::DMatrix;
use rand::Rng;

use super::validate_dists;
use crate::distributions::Dist;
use crate::error::Error;
use crate::numerics::RngStream;

/// Independent draws; row i is one sample, column d follows `dists[d]`.
/// Draw order is row-major, which pins the rng consumption pattern.
pub fn monte_carlo(n: usize, dists: &[Dist], rng: &mut RngStream) -> Result<DMatrix<f64>, Error> {
    validate_dists(dists)?;
    if n == 0 {
        return Err(Error::EmptyData("sample count".into()));
    }
    let d = dists.len();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        for (j, dist) in dists.iter().enumerate() {
            out[(i, j)] = dist.sample(rng);
        }
    }
    Ok(out)
}

/// Latin hypercube design: per dimension the n samples occupy the n
/// equal-probability strata exactly once, with stratum-to-row pairing
/// randomized independently per dimension.
pub fn latin_hypercube(
    n: usize,
    dists: &[Dist],
    rng: &mut RngStream,
) -> Result<DMatrix<f64>, Error> {
    validate_dists(dists)?;
    if n == 0 {
        return Err(Error::EmptyData("sample count".into()));
    }
    let d = dists.len();
    let mut out = DMatrix::zeros(n, d);
    let mut strata: Vec<usize> = (0..n).collect();
    for (j, dist) in dists.iter().enumerate() {
        // Fisher-Yates pairing of rows to strata.
        for i in (1..n).rev() {
            let k = rng.random_range(0..=i);
            strata.swap(i, k);
        }
        for i in 0..n {
            let u: f64 = rng.random();
            let p = (strata[i] as f64 + u) / n as f64;
            out[(i, j)] = dist.inverse_cdf(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::standard_normal_cdf;

    #[test]
    fn monte_carlo_uniform_mean_within_clt_bound() {
        let mut rng = RngStream::new(101, 0);
        let n = 100_000;
        let s = monte_carlo(n, &[Dist::Uniform { low: 0.0, high: 1.0 }], &mut rng).unwrap();
        let mean = s.column(0).sum() / n as f64;
        // sd of the mean = 1/sqrt(12 n); allow 3 sigma.
        let bound = 3.0 / (12.0 * n as f64).sqrt();
        assert!((mean - 0.5).abs() < bound, "mean {mean} outside {bound}");
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let dists = [
            Dist::Normal { mean: 1.0, std: 2.0 },
            Dist::Uniform { low: -1.0, high: 1.0 },
        ];
        let a = monte_carlo(50, &dists, &mut RngStream::new(7, 1)).unwrap();
        let b = monte_carlo(50, &dists, &mut RngStream::new(7, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_normal_skewness_is_small() {
        let mut rng = RngStream::new(102, 0);
        let n = 1_000_000;
        let s = monte_carlo(n, &[Dist::Normal { mean: 0.0, std: 1.0 }], &mut rng).unwrap();
        let mean = s.column(0).sum() / n as f64;
        let mut m2 = 0.0;
        let mut m3 = 0.0;
        for i in 0..n {
            let c = s[(i, 0)] - mean;
            m2 += c * c;
            m3 += c * c * c;
        }
        m2 /= n as f64;
        m3 /= n as f64;
        let skew = m3 / m2.powf(1.5);
        assert!(skew.abs() < 0.05, "skewness {skew}");
    }

    #[test]
    fn latin_hypercube_uniform_fills_each_stratum_once() {
        let mut rng = RngStream::new(103, 0);
        let s = latin_hypercube(4, &[Dist::Uniform { low: 0.0, high: 1.0 }], &mut rng).unwrap();
        let mut vals: Vec<f64> = (0..4).map(|i| s[(i, 0)]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, v) in vals.iter().enumerate() {
            let lo = k as f64 * 0.25;
            assert!(*v >= lo && *v < lo + 0.25, "sample {v} not in stratum {k}");
        }
    }

    #[test]
    fn latin_hypercube_ranks_are_permutations_per_dimension() {
        let mut rng = RngStream::new(104, 0);
        let n = 23;
        let dists = [
            Dist::Normal { mean: 2.0, std: 0.5 },
            Dist::Uniform { low: -3.0, high: 4.0 },
            Dist::LogNormal { mu: 0.0, sigma: 0.8 },
        ];
        let s = latin_hypercube(n, &dists, &mut rng).unwrap();
        for (j, dist) in dists.iter().enumerate() {
            let mut seen = vec![false; n];
            for i in 0..n {
                let rank = (dist.cdf(s[(i, j)]) * n as f64).floor() as usize;
                let rank = rank.min(n - 1);
                assert!(!seen[rank], "dimension {j} stratum {rank} occupied twice");
                seen[rank] = true;
            }
        }
    }

    #[test]
    fn latin_hypercube_normal_marginals_look_standard() {
        let mut rng = RngStream::new(105, 0);
        let n = 2000;
        let s = latin_hypercube(n, &[Dist::Normal { mean: 0.0, std: 1.0 }], &mut rng).unwrap();
        // Stratified sampling beats plain MC: the empirical CDF must hug the
        // normal CDF to within one stratum width.
        let mut vals: Vec<f64> = (0..n).map(|i| s[(i, 0)]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (i, v) in vals.iter().enumerate() {
            let emp = (i as f64 + 0.5) / n as f64;
            assert!((standard_normal_cdf(*v) - emp).abs() < 1.0 / n as f64);
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(monte_carlo(0, &[Dist::Uniform { low: 0.0, high: 1.0 }], &mut rng).is_err());
        assert!(monte_carlo(5, &[], &mut rng).is_err());
        assert!(latin_hypercube(0, &[Dist::Uniform { low: 0.0, high: 1.0 }], &mut rng).is_err());
    }
}
