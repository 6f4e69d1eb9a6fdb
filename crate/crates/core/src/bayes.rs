//! Model calibration against experimental data: residual likelihoods,
//! log-posterior assembly, and posterior predictive summaries.
//!
//! An experiment is a set of configurations with one scalar observation
//! each. A computational model evaluated at calibration parameters theta
//! produces one output per configuration; the observation noise scale
//! `sigma_eps` is itself a calibrated parameter, appended after theta, and
//! absorbs model inadequacy alongside measurement error. Likelihood
//! assembly is a deterministic sum over configurations, so the per-row
//! model evaluations can run concurrently upstream and be reduced here.
//!
//! The noise family is either a plain Gaussian on the residuals or a
//! Gaussian truncated to the observable's physical range; the truncated
//! form renormalizes each term by the in-bounds mass around that row's
//! prediction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distributions::Dist;
use crate::error::Error;
use crate::numerics::RngStream;

const LN_TAU: f64 = 1.8378770664093453;

/// Experimental configurations (one per row) and their observations.
#[derive(Clone, Debug)]
pub struct ExperimentalDataset {
    configurations: DMatrix<f64>,
    observations: DVector<f64>,
}

impl ExperimentalDataset {
    pub fn new(configurations: DMatrix<f64>, observations: DVector<f64>) -> Result<Self, Error> {
        if configurations.nrows() == 0 {
            return Err(Error::EmptyData("experimental configurations".into()));
        }
        if configurations.nrows() != observations.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} configurations vs {} observations",
                configurations.nrows(),
                observations.len()
            )));
        }
        if configurations.iter().any(|v| !v.is_finite())
            || observations.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidConfig("experimental data must be finite".into()));
        }
        Ok(Self { configurations, observations })
    }

    /// Parses a CSV file with a header row; `observation_column` names the
    /// observation, every other column (in header order) is a
    /// configuration coordinate. Returns the dataset and the
    /// configuration column names.
    pub fn from_csv(
        path: &std::path::Path,
        observation_column: &str,
    ) -> Result<(Self, Vec<String>), Error> {
        let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
        let headers = reader.headers().map_err(csv_error)?.clone();
        let obs_idx = headers
            .iter()
            .position(|h| h == observation_column)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "observation column '{observation_column}' not found in header"
                ))
            })?;
        let config_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != obs_idx)
            .map(|(_, h)| h.to_string())
            .collect();
        if config_names.is_empty() {
            return Err(Error::InvalidConfig(
                "csv needs at least one configuration column".into(),
            ));
        }
        let mut configs = Vec::new();
        let mut obs = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(csv_error)?;
            if record.len() != headers.len() {
                return Err(Error::InvalidConfig(format!(
                    "csv row {} has {} fields, header has {}",
                    row + 1,
                    record.len(),
                    headers.len()
                )));
            }
            for (i, field) in record.iter().enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "csv row {}, column '{}': cannot parse '{}' as a number",
                        row + 1,
                        &headers[i],
                        field
                    ))
                })?;
                if i == obs_idx {
                    obs.push(value);
                } else {
                    configs.push(value);
                }
            }
        }
        if obs.is_empty() {
            return Err(Error::EmptyData("csv has no data rows".into()));
        }
        let n = obs.len();
        let dataset = Self::new(
            DMatrix::from_row_slice(n, config_names.len(), &configs),
            DVector::from_vec(obs),
        )?;
        Ok((dataset, config_names))
    }

    /// Number of experimental rows.
    pub fn len(&self) -> usize {
        self.configurations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Configuration dimension C.
    pub fn config_dim(&self) -> usize {
        self.configurations.ncols()
    }

    pub fn configurations(&self) -> &DMatrix<f64> {
        &self.configurations
    }

    pub fn observations(&self) -> &DVector<f64> {
        &self.observations
    }

    /// Row `i` as a plain vector.
    pub fn configuration(&self, i: usize) -> Vec<f64> {
        self.configurations.row(i).iter().copied().collect()
    }
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::InvalidConfig(e.to_string())
    }
}

/// Observation-noise family.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LikelihoodSpec {
    /// Residuals are zero-mean Gaussian with scale sigma_eps.
    Gaussian,
    /// Gaussian noise truncated to the observable's physical range
    /// `[lower, upper]`, renormalized per row around the prediction.
    TruncatedGaussian { lower: f64, upper: f64 },
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if let LikelihoodSpec::TruncatedGaussian { lower, upper } = self {
            if !(lower < upper) {
                return Err(Error::InvalidConfig(format!(
                    "truncation bounds must satisfy lower < upper, got [{lower}, {upper}]"
                )));
            }
        }
        Ok(())
    }
}

fn check_sigma(sigma_eps: f64) -> Result<(), Error> {
    if !(sigma_eps.is_finite() && sigma_eps > 0.0) {
        return Err(Error::NonPositiveParameter(format!(
            "noise scale sigma_eps (got {sigma_eps})"
        )));
    }
    Ok(())
}

/// Log-likelihood of the observations given one model output per
/// configuration and a noise scale.
///
/// Each term is the log density of the residual `observation - output`
/// under the noise family. The truncated family renormalizes by the
/// in-bounds probability mass around the prediction; when that mass
/// underflows to zero (prediction far outside the physical range) the
/// result is `-inf`, which samplers treat as an automatic rejection.
pub fn log_likelihood(
    sigma_eps: f64,
    model_outputs: &[f64],
    data: &ExperimentalDataset,
    spec: &LikelihoodSpec,
) -> Result<f64, Error> {
    check_sigma(sigma_eps)?;
    spec.validate()?;
    if model_outputs.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} model outputs vs {} observations",
            model_outputs.len(),
            data.len()
        )));
    }
    if let Some(i) = model_outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::ModelEvaluation(format!(
            "model output {i} is not finite"
        )));
    }
    let normal = statrs::distribution::Normal::standard();
    use statrs::distribution::ContinuousCDF;
    let mut total = 0.0;
    for i in 0..data.len() {
        let obs = data.observations[i];
        let residual = obs - model_outputs[i];
        let z = residual / sigma_eps;
        total += -0.5 * LN_TAU - sigma_eps.ln() - 0.5 * z * z;
        if let LikelihoodSpec::TruncatedGaussian { lower, upper } = *spec {
            if obs < lower || obs > upper {
                return Err(Error::OutOfSupport(format!(
                    "observation {i} = {obs} outside [{lower}, {upper}]"
                )));
            }
            let m = model_outputs[i];
            let mass = normal.cdf((upper - m) / sigma_eps) - normal.cdf((lower - m) / sigma_eps);
            if mass <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total -= mass.ln();
        }
    }
    Ok(total)
}

/// Unnormalized log-posterior over `(theta, sigma_eps)`.
///
/// `priors` holds one distribution per theta coordinate plus a final one
/// for sigma_eps on its natural scale. A zero prior density short-circuits
/// to `-inf` before the likelihood is touched.
pub fn log_posterior(
    theta: &[f64],
    sigma_eps: f64,
    model_outputs: &[f64],
    data: &ExperimentalDataset,
    spec: &LikelihoodSpec,
    priors: &[Dist],
) -> Result<f64, Error> {
    if priors.len() != theta.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} priors for {} theta coordinates plus sigma_eps",
            priors.len(),
            theta.len()
        )));
    }
    let mut lp = 0.0;
    for (d, v) in priors.iter().zip(theta.iter().chain(std::iter::once(&sigma_eps))) {
        lp += d.ln_pdf(*v);
    }
    if lp == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(lp + log_likelihood(sigma_eps, model_outputs, data, spec)?)
}

/// Log-posterior over a packed sampler position `[theta.., ln sigma_eps]`.
///
/// The noise scale is walked in log-space so every position is valid; the
/// prior on sigma_eps stays on the natural scale, so the change of
/// variables adds `ln sigma_eps` to the density.
pub fn log_posterior_packed(
    position: &[f64],
    model_outputs: &[f64],
    data: &ExperimentalDataset,
    spec: &LikelihoodSpec,
    priors: &[Dist],
) -> Result<f64, Error> {
    if position.is_empty() {
        return Err(Error::EmptyData("sampler position".into()));
    }
    let (theta, ln_sigma) = position.split_at(position.len() - 1);
    let sigma_eps = ln_sigma[0].exp();
    if sigma_eps == 0.0 || !sigma_eps.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let lp = log_posterior(theta, sigma_eps, model_outputs, data, spec, priors)?;
    Ok(lp + ln_sigma[0])
}

/// A central credible interval of the posterior predictive sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveInterval {
    /// Central coverage in (0, 1), e.g. 0.95.
    pub coverage: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Empirical posterior predictive distribution at one configuration.
#[derive(Clone, Debug)]
pub struct PredictiveSummary {
    pub median: f64,
    pub intervals: Vec<PredictiveInterval>,
    /// Successful predictive samples, sorted ascending.
    pub samples: Vec<f64>,
    /// Posterior draws whose model evaluation failed.
    pub failure_count: usize,
    /// Total posterior draws attempted.
    pub draw_count: usize,
}

impl PredictiveSummary {
    pub fn failure_fraction(&self) -> f64 {
        self.failure_count as f64 / self.draw_count as f64
    }
}

/// Linear-interpolation empirical quantile of an ascending-sorted slice.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pushes posterior draws through the model at `new_config`, adds
/// observation noise per the likelihood family, and summarizes the
/// resulting predictive sample.
///
/// `model` maps `(new_config, theta)` to a scalar prediction; evaluation
/// failures are counted and excluded, and the quantiles are computed over
/// the successes. One noise variate is consumed per draw whether or not
/// the evaluation succeeds, so the stream position never depends on which
/// draws fail. A zero noise scale adds no noise.
pub fn posterior_predictive(
    draws: &[(Vec<f64>, f64)],
    new_config: &[f64],
    model: &mut dyn FnMut(&[f64], &[f64]) -> Result<f64, Error>,
    spec: &LikelihoodSpec,
    coverages: &[f64],
    rng: &mut RngStream,
) -> Result<PredictiveSummary, Error> {
    if draws.is_empty() {
        return Err(Error::EmptyData("posterior draws".into()));
    }
    spec.validate()?;
    if coverages.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(Error::InvalidConfig("interval coverages must lie in (0, 1)".into()));
    }
    for (_, sigma) in draws {
        if !(sigma.is_finite() && *sigma >= 0.0) {
            return Err(Error::NonPositiveParameter(format!(
                "posterior draw has noise scale {sigma}"
            )));
        }
    }
    let mut samples = Vec::with_capacity(draws.len());
    let mut failure_count = 0usize;
    for (theta, sigma) in draws {
        let u: f64 = rng.random_range(0.0..1.0);
        match model(new_config, theta) {
            Ok(m) if m.is_finite() => {
                let value = match *spec {
                    LikelihoodSpec::Gaussian => {
                        if *sigma == 0.0 {
                            m
                        } else {
                            m + sigma
                                * crate::distributions::standard_normal_quantile(u)
                        }
                    }
                    LikelihoodSpec::TruncatedGaussian { lower, upper } => {
                        if *sigma == 0.0 {
                            m.clamp(lower, upper)
                        } else {
                            Dist::TruncatedNormal {
                                mean: m,
                                std: *sigma,
                                low: lower,
                                high: upper,
                            }
                            .inverse_cdf(u)
                        }
                    }
                };
                samples.push(value);
            }
            _ => failure_count += 1,
        }
    }
    if samples.is_empty() {
        return Err(Error::ModelEvaluation(
            "every posterior draw failed to evaluate".into(),
        ));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let median = empirical_quantile(&samples, 0.5);
    let intervals = coverages
        .iter()
        .map(|&coverage| {
            let tail = 0.5 * (1.0 - coverage);
            PredictiveInterval {
                coverage,
                lower: empirical_quantile(&samples, tail),
                upper: empirical_quantile(&samples, 1.0 - tail),
            }
        })
        .collect();
    Ok(PredictiveSummary {
        median,
        intervals,
        samples,
        failure_count,
        draw_count: draws.len(),
    })
}
