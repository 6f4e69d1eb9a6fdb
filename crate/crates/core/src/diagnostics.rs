//! Predictive-quality metrics for probabilistic regressors: accuracy of
//! the means, calibration of the stated uncertainties, and how sharp and
//! varied those uncertainties are.
//!
//! Calibration treats each test residual as a draw from the predicted
//! Gaussian: a well-calibrated model's normalized residual quantiles
//! `Phi((y - mu)/sigma)` are uniform, so the observed fraction at or
//! below each expected quantile traces the diagonal. The miscalibration
//! area integrates the absolute deviation from that diagonal.
//!
//! - `rmse`, `mae`, `median_absolute_error`: residual magnitudes
//! - `marpd`: mean absolute relative percent difference,
//!   `100 * |2(mu - y)| / (|mu| + |y|)` averaged (0 when both vanish)
//! - `sharpness`: root mean predicted variance (smaller is sharper)
//! - `cv`: sample coefficient of variation of the predicted standard
//!   deviations (larger means the model differentiates its confidence)

use crate::bayes::empirical_quantile;
use crate::distributions::standard_normal_cdf;
use crate::error::Error;

/// Full metrics report for one prediction set.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UncertaintyMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub median_absolute_error: f64,
    /// Percent, in [0, 200].
    pub marpd: f64,
    pub miscalibration_area: f64,
    pub sharpness: f64,
    pub cv: f64,
}

fn check_aligned(means: &[f64], stds: &[f64], truths: &[f64]) -> Result<(), Error> {
    if means.is_empty() {
        return Err(Error::EmptyData("predictions".into()));
    }
    if means.len() != stds.len() || means.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} means, {} stds, {} truths",
            means.len(),
            stds.len(),
            truths.len()
        )));
    }
    if let Some(i) = stds.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::NonPositiveParameter(format!(
            "predicted std {i} (got {})",
            stds[i]
        )));
    }
    if means.iter().chain(truths).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("means and truths must be finite".into()));
    }
    Ok(())
}

/// Expected-vs-observed quantile curve over `points` grid values.
///
/// Returns `(expected, observed)` pairs where `observed` is the fraction
/// of normalized residuals whose Gaussian quantile is at or below
/// `expected`.
pub fn calibration_curve(
    means: &[f64],
    stds: &[f64],
    truths: &[f64],
    points: usize,
) -> Result<Vec<(f64, f64)>, Error> {
    check_aligned(means, stds, truths)?;
    if points < 2 {
        return Err(Error::InvalidConfig("calibration grid needs at least 2 points".into()));
    }
    let mut quantiles: Vec<f64> = means
        .iter()
        .zip(stds)
        .zip(truths)
        .map(|((m, s), y)| standard_normal_cdf((y - m) / s))
        .collect();
    quantiles.sort_by(|a, b| a.partial_cmp(b).expect("finite quantiles"));
    let n = quantiles.len() as f64;
    Ok((0..points)
        .map(|k| {
            let expected = k as f64 / (points - 1) as f64;
            let observed = quantiles.partition_point(|q| *q <= expected) as f64 / n;
            (expected, observed)
        })
        .collect())
}

/// Trapezoidal integral of `|observed - expected|` over the curve.
pub fn miscalibration_area(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| {
            let (p0, o0) = w[0];
            let (p1, o1) = w[1];
            0.5 * ((o0 - p0).abs() + (o1 - p1).abs()) * (p1 - p0)
        })
        .sum()
}

/// Computes the full report; the calibration grid uses 100 points.
pub fn uncertainty_metrics(
    means: &[f64],
    stds: &[f64],
    truths: &[f64],
) -> Result<UncertaintyMetrics, Error> {
    check_aligned(means, stds, truths)?;
    let n = means.len() as f64;
    let mut abs_errors: Vec<f64> =
        means.iter().zip(truths).map(|(m, y)| (m - y).abs()).collect();
    let rmse = (abs_errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mae = abs_errors.iter().sum::<f64>() / n;
    abs_errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let median_absolute_error = empirical_quantile(&abs_errors, 0.5);
    let marpd = 100.0
        * means
            .iter()
            .zip(truths)
            .map(|(m, y)| {
                let denom = m.abs() + y.abs();
                if denom == 0.0 {
                    0.0
                } else {
                    (2.0 * (m - y)).abs() / denom
                }
            })
            .sum::<f64>()
        / n;
    let curve = calibration_curve(means, stds, truths, 100)?;
    let sharpness = (stds.iter().map(|s| s * s).sum::<f64>() / n).sqrt();
    let mean_std = stds.iter().sum::<f64>() / n;
    let cv = if stds.len() < 2 {
        0.0
    } else {
        let var = stds.iter().map(|s| (s - mean_std).powi(2)).sum::<f64>()
            / (stds.len() - 1) as f64;
        var.sqrt() / mean_std
    };
    Ok(UncertaintyMetrics {
        rmse,
        mae,
        median_absolute_error,
        marpd,
        miscalibration_area: miscalibration_area(&curve),
        sharpness,
        cv,
    })
}
