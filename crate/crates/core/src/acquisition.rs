//! Acquisition scores over surrogate predictions, vector-output reduction,
//! and greedy batch selection with local penalization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{standard_normal_cdf, standard_normal_pdf};
use crate::error::Error;
use crate::surrogate::Surrogate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    ExpectedImprovement,
    UpperConfidenceBound,
    ProbabilityOfImprovement,
    BayesianPosteriorTargeted,
    UFunction,
    ExpectedImprovementGlobalFit,
    CoefficientOfVariation,
}

impl AcquisitionKind {
    /// Whether the score is driven toward smaller values by the caller. The
    /// U-function measures confidence in a classification against the
    /// threshold `lambda`: small = close to the threshold with high
    /// uncertainty (evaluate next), large = adequately resolved.
    pub fn is_minimized(self) -> bool {
        matches!(self, AcquisitionKind::UFunction)
    }

    fn needs_best_value(self) -> bool {
        matches!(
            self,
            AcquisitionKind::ExpectedImprovement
                | AcquisitionKind::ProbabilityOfImprovement
                | AcquisitionKind::ExpectedImprovementGlobalFit
        )
    }
}

/// Reduction applied to elementwise scores of a vector-valued prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
    Max,
    Min,
    Product,
}

impl Reduction {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Reduction::Sum => values.iter().sum(),
            Reduction::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Reduction::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Reduction::Min => values.iter().cloned().fold(f64::INFINITY, f64::min),
            Reduction::Product => values.iter().product(),
        }
    }
}

fn default_reduction() -> Reduction {
    Reduction::Sum
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    /// Tuning parameter: improvement offset (expected improvement),
    /// exploration weight (confidence bound), posterior-targeting weight, or
    /// the threshold of the U-function.
    #[serde(default)]
    pub lambda: f64,
    /// Reference value M(x*): incumbent best for improvement-based kinds,
    /// nearest observed output for global fit.
    #[serde(default)]
    pub best_value: Option<f64>,
    #[serde(default = "default_reduction")]
    pub reduction: Reduction,
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self { kind, lambda: 0.0, best_value: None, reduction: Reduction::Sum }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_best_value(mut self, best: f64) -> Self {
        self.best_value = Some(best);
        self
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("acquisition lambda must be finite".into()));
        }
        match self.best_value {
            Some(v) if !v.is_finite() => {
                Err(Error::InvalidConfig("acquisition best_value must be finite".into()))
            }
            None if self.kind.needs_best_value() => Err(Error::InvalidConfig(format!(
                "{:?} requires best_value",
                self.kind
            ))),
            _ => Ok(()),
        }
    }
}

/// Scalar score plus a flag marking division by a vanishing denominator
/// (zero predictive deviation, or zero mean for coefficient of variation),
/// in which case the value is +inf: the prediction is taken as perfectly
/// confident there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionValue {
    pub value: f64,
    pub degenerate: bool,
}

impl AcquisitionValue {
    fn finite(value: f64) -> Self {
        Self { value, degenerate: false }
    }

    fn degenerate() -> Self {
        Self { value: f64::INFINITY, degenerate: true }
    }
}

/// Evaluates one acquisition score at a scalar prediction (mu, sigma).
///
/// Expected improvement uses z = mu - lambda - M(x*) and scores
/// z Phi(z/sigma) + sigma phi(z/sigma); the posterior-targeted score is
/// exp(2 lambda mu) (exp(sigma^2) - 1) with the predictive variance inside
/// the exponential.
pub fn evaluate_acquisition(
    spec: &AcquisitionSpec,
    mu: f64,
    sigma: f64,
) -> Result<AcquisitionValue, Error> {
    spec.validate()?;
    if !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::InvalidConfig("acquisition inputs must be finite".into()));
    }
    if sigma < 0.0 {
        return Err(Error::NonPositiveParameter("predictive deviation must be >= 0".into()));
    }
    let value = match spec.kind {
        AcquisitionKind::ExpectedImprovement => {
            let z = mu - spec.lambda - spec.best_value.expect("validated");
            if sigma == 0.0 {
                AcquisitionValue::finite(z.max(0.0))
            } else {
                let t = z / sigma;
                AcquisitionValue::finite(z * standard_normal_cdf(t) + sigma * standard_normal_pdf(t))
            }
        }
        AcquisitionKind::UpperConfidenceBound => {
            AcquisitionValue::finite(spec.lambda * sigma + mu)
        }
        AcquisitionKind::ProbabilityOfImprovement => {
            let z = mu - spec.best_value.expect("validated");
            if sigma == 0.0 {
                // Limit of Phi(z/sigma): a step through 1/2 at z = 0.
                AcquisitionValue::finite(if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    0.0
                } else {
                    0.5
                })
            } else {
                AcquisitionValue::finite(standard_normal_cdf(z / sigma))
            }
        }
        AcquisitionKind::BayesianPosteriorTargeted => {
            // exp(2*lambda*mu) * (exp(sigma^2) - 1), combined in log space:
            // with log-density surrogates the weight underflows while the
            // variance factor overflows, and 0 * inf is NaN.
            let v2 = sigma * sigma;
            let log_gain = if v2 > 700.0 { v2 } else { v2.exp_m1().ln() };
            AcquisitionValue::finite((2.0 * spec.lambda * mu + log_gain).exp())
        }
        AcquisitionKind::UFunction => {
            if sigma == 0.0 {
                AcquisitionValue::degenerate()
            } else {
                AcquisitionValue::finite((mu - spec.lambda).abs() / sigma)
            }
        }
        AcquisitionKind::ExpectedImprovementGlobalFit => {
            let z = mu - spec.best_value.expect("validated");
            AcquisitionValue::finite(z * z + sigma * sigma)
        }
        AcquisitionKind::CoefficientOfVariation => {
            if mu == 0.0 {
                AcquisitionValue::degenerate()
            } else {
                AcquisitionValue::finite(sigma / mu)
            }
        }
    };
    Ok(value)
}

/// Elementwise acquisition over a vector-valued prediction followed by the
/// configured reduction. A degenerate element poisons the reduction (the
/// flag is set and infinities propagate through the arithmetic).
pub fn reduce_vector_acquisition(
    spec: &AcquisitionSpec,
    mu: &[f64],
    sigma: &[f64],
) -> Result<AcquisitionValue, Error> {
    if mu.is_empty() {
        return Err(Error::EmptyData("acquisition input vector".into()));
    }
    if mu.len() != sigma.len() {
        return Err(Error::DimensionMismatch(format!(
            "mu has {} entries, sigma has {}",
            mu.len(),
            sigma.len()
        )));
    }
    let mut values = Vec::with_capacity(mu.len());
    let mut degenerate = false;
    for (m, s) in mu.iter().zip(sigma) {
        let v = evaluate_acquisition(spec, *m, *s)?;
        degenerate |= v.degenerate;
        values.push(v.value);
    }
    Ok(AcquisitionValue { value: spec.reduction.apply(&values), degenerate })
}

/// Correlation-shaped penalty between two inputs:
/// 1 - exp(-||(x - x') / l|| / 2). Zero at coincident points, approaching
/// one at large standardized separation.
pub fn local_penalization_correlation(
    x: &[f64],
    x_prime: &[f64],
    length_scales: &[f64],
) -> Result<f64, Error> {
    if x.len() != x_prime.len() || x.len() != length_scales.len() {
        return Err(Error::DimensionMismatch(format!(
            "points of dimension {}/{} with {} length scales",
            x.len(),
            x_prime.len(),
            length_scales.len()
        )));
    }
    if length_scales.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::NonPositiveParameter("length scales must be positive".into()));
    }
    let mut sq = 0.0;
    for i in 0..x.len() {
        let d = (x[i] - x_prime[i]) / length_scales[i];
        sq += d * d;
    }
    Ok(1.0 - (-sq.sqrt() / 2.0).exp())
}

/// Greedy batch selection from precomputed scores: the k-th pick maximizes
/// score(x) times the product of correlations to the already-selected
/// points. Ties break to the lowest candidate index; selected indices are
/// excluded from later picks.
pub fn select_batch_from_scores(
    scores: &[f64],
    candidates: &DMatrix<f64>,
    batch_size: usize,
    length_scales: &[f64],
) -> Result<Vec<usize>, Error> {
    let pool = candidates.nrows();
    if scores.len() != pool {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} candidates",
            scores.len(),
            pool
        )));
    }
    if batch_size > pool {
        return Err(Error::InsufficientCandidates { needed: batch_size, got: pool });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFiniteTarget);
    }
    let dim = candidates.ncols();
    if length_scales.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{} length scales for {}-dimensional candidates",
            length_scales.len(),
            dim
        )));
    }

    let row = |i: usize| -> Vec<f64> { (0..dim).map(|j| candidates[(i, j)]).collect() };
    let mut selected: Vec<usize> = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..pool {
            if selected.contains(&i) {
                continue;
            }
            let mut penalized = scores[i];
            for &s in &selected {
                penalized *= local_penalization_correlation(&row(i), &row(s), length_scales)?;
            }
            let better = match best {
                None => true,
                Some((_, b)) => penalized > b,
            };
            if better {
                best = Some((i, penalized));
            }
        }
        selected.push(best.expect("pool is non-empty").0);
    }
    Ok(selected)
}

/// Scores every candidate through the surrogate (reducing vector outputs per
/// the spec) and runs greedy penalized selection with the supplied length
/// scales.
pub fn select_batch(
    candidates: &DMatrix<f64>,
    model: &dyn Surrogate,
    spec: &AcquisitionSpec,
    batch_size: usize,
    length_scales: &[f64],
) -> Result<Vec<usize>, Error> {
    let pool = candidates.nrows();
    if batch_size > pool {
        return Err(Error::InsufficientCandidates { needed: batch_size, got: pool });
    }
    let pred = model.predict(candidates, false)?;
    let m = model.output_dim();
    let means = pred.mean_matrix(m);
    let stds = pred.std();
    let mut scores = Vec::with_capacity(pool);
    for i in 0..pool {
        let mu: Vec<f64> = (0..m).map(|j| means[(i, j)]).collect();
        let sigma: Vec<f64> = (0..m).map(|j| stds[j * pool + i]).collect();
        scores.push(reduce_vector_acquisition(spec, &mu, &sigma)?.value);
    }
    select_batch_from_scores(&scores, candidates, batch_size, length_scales)
}
