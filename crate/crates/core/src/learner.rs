//! Outer loops that bind surrogates, acquisition scoring, and the
//! evaluation harness into complete drivers: batch Bayesian optimization,
//! likelihood-targeted active learning for calibration, and ensemble
//! MCMC over a trained surrogate.
//!
//! Every iteration draws a fresh candidate pool from the supplied
//! distributions, scores it through the current surrogate, picks a batch
//! by penalized greedy selection, evaluates that batch through the
//! harness (concurrently up to `max_concurrency`), appends the results,
//! and retrains. Candidates always come from the configured
//! distributions, so the true model is never evaluated outside their
//! support. Failed evaluations are dropped with a warning count; the
//! training set grows by exactly the batch size minus such failures.
//!
//! The per-iteration convergence metric is the maximum acquisition score
//! over the pool, smoothed by averaging the last five iterations; when a
//! tolerance is configured the loop stops once the smoothed metric drops
//! below it.

use nalgebra::{DMatrix, DVector};

use crate::acquisition::{
    reduce_vector_acquisition, select_batch_from_scores, AcquisitionKind, AcquisitionSpec,
};
use crate::bayes::{log_likelihood, ExperimentalDataset, LikelihoodSpec};
use crate::data::Dataset;
use crate::distributions::{joint_ln_pdf, validate_priors, Dist};
use crate::error::Error;
use crate::gp::{train_gp, GpModel, GpTrainer};
use crate::harness::{evaluate_batch, EvalStatus, EvaluationRequest, ModelSpec};
use crate::numerics::RngStream;
use crate::samplers::{
    differential_evolution_step, gelman_rubin, latin_hypercube, monte_carlo, stretch_move_step,
    EnsembleState,
};
use crate::surrogate::Surrogate;

/// Shared settings for the active-learning drivers.
#[derive(Clone, Debug)]
pub struct ActiveLearningConfig {
    pub trainer: GpTrainer,
    /// `best_value` is managed by the driver: improvement-based kinds get
    /// the running incumbent, the global-fit kind gets the output of the
    /// nearest training point per candidate.
    pub acquisition: AcquisitionSpec,
    /// Points evaluated per outer iteration.
    pub batch_size: usize,
    pub outer_iterations: usize,
    /// Fresh candidates drawn each iteration.
    pub candidate_pool_size: usize,
    /// Space-filling design evaluated before the loop starts.
    pub warmup: usize,
    /// Stop once the smoothed maximum acquisition falls below this.
    pub convergence_tol: Option<f64>,
    pub max_concurrency: usize,
}

impl ActiveLearningConfig {
    pub fn new(acquisition: AcquisitionSpec) -> Self {
        Self {
            trainer: GpTrainer::Adam {
                config: crate::trainers::AdamConfig {
                    iterations: 200,
                    ..Default::default()
                },
                batch_size: None,
            },
            acquisition,
            batch_size: 1,
            outer_iterations: 20,
            candidate_pool_size: 1000,
            warmup: 10,
            convergence_tol: None,
            max_concurrency: 1,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.batch_size > self.candidate_pool_size {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds candidate_pool_size {}",
                self.batch_size, self.candidate_pool_size
            )));
        }
        if self.warmup < 2 {
            return Err(Error::InvalidConfig("warmup design needs at least 2 points".into()));
        }
        if self.outer_iterations == 0 {
            return Err(Error::InvalidConfig("outer_iterations must be at least 1".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::InvalidConfig("max_concurrency must be at least 1".into()));
        }
        if let Some(tol) = self.convergence_tol {
            if !(tol > 0.0) {
                return Err(Error::InvalidConfig("convergence_tol must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One outer iteration of an active-learning run.
#[derive(Clone, Debug)]
pub struct IterationTrace {
    /// 1-based outer iteration.
    pub iteration: usize,
    /// Maximum acquisition score over this iteration's pool.
    pub max_acquisition: f64,
    /// Mean of the last five (or fewer) maxima.
    pub smoothed_acquisition: f64,
    /// Points sent to the model this iteration (rows).
    pub batch: DMatrix<f64>,
    /// Batch evaluations that failed and were dropped.
    pub failures: usize,
}

/// Outcome of a Bayesian-optimization run (maximization).
#[derive(Debug)]
pub struct BoResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Every successful evaluation, warmup included.
    pub evaluations: Dataset,
    pub trace: Vec<IterationTrace>,
    pub failures: usize,
    /// True when the smoothed-acquisition rule stopped the loop.
    pub converged: bool,
    /// Set when surrogate training failed and the loop stopped early;
    /// everything gathered so far is still returned.
    pub aborted: Option<String>,
}

/// Outcome of likelihood-targeted active learning.
#[derive(Debug)]
pub struct BalResult {
    /// Maps `(theta.., sigma_eps)` to the data log-likelihood.
    pub surrogate: GpModel,
    pub evaluations: Dataset,
    pub trace: Vec<IterationTrace>,
    pub failures: usize,
    pub converged: bool,
    pub aborted: Option<String>,
}

fn smoothed(history: &[f64]) -> f64 {
    let window = history.len().min(5);
    history[history.len() - window..].iter().sum::<f64>() / window as f64
}

/// Scores one candidate row, resolving the reference value the kind needs.
fn score_candidate(
    spec: &AcquisitionSpec,
    mu: f64,
    sigma: f64,
    candidate: &[f64],
    incumbent: f64,
    data: &Dataset,
) -> Result<f64, Error> {
    let mut spec = spec.clone();
    match spec.kind {
        AcquisitionKind::ExpectedImprovement | AcquisitionKind::ProbabilityOfImprovement => {
            spec.best_value = Some(incumbent);
        }
        AcquisitionKind::ExpectedImprovementGlobalFit => {
            let mut best = (f64::INFINITY, 0usize);
            for i in 0..data.len() {
                let d: f64 = (0..data.input_dim())
                    .map(|j| (data.inputs()[(i, j)] - candidate[j]).powi(2))
                    .sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            spec.best_value = Some(data.outputs()[(best.1, 0)]);
        }
        _ => {}
    }
    Ok(reduce_vector_acquisition(&spec, &[mu], &[sigma])?.value)
}

/// Evaluates `points` (rows) through the harness and appends the first
/// output of each success to `inputs`/`outputs`. Returns the failure
/// count.
fn evaluate_points(
    model: &ModelSpec,
    points: &DMatrix<f64>,
    max_concurrency: usize,
    inputs: &mut Vec<Vec<f64>>,
    outputs: &mut Vec<f64>,
) -> Result<usize, Error> {
    let requests: Vec<EvaluationRequest> = (0..points.nrows())
        .map(|k| {
            EvaluationRequest::new(k as u64, points.row(k).iter().copied().collect())
        })
        .collect();
    let records = evaluate_batch(model, &requests, max_concurrency)?;
    let mut failures = 0;
    for (k, record) in records.iter().enumerate() {
        if record.status == EvalStatus::Ok && !record.outputs.is_empty() {
            inputs.push(points.row(k).iter().copied().collect());
            outputs.push(record.outputs[0]);
        } else {
            failures += 1;
            log::warn!(
                "evaluation {} failed ({:?}): {}",
                record.request_id,
                record.status,
                record.message.as_deref().unwrap_or("no detail")
            );
        }
    }
    Ok(failures)
}

fn dataset_from(inputs: &[Vec<f64>], outputs: &[f64]) -> Result<Dataset, Error> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::ModelEvaluation(format!(
            "only {n} successful evaluations; need at least 2 to fit a surrogate"
        )));
    }
    let d = inputs[0].len();
    let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
    Dataset::univariate(
        DMatrix::from_row_slice(n, d, &flat),
        DVector::from_column_slice(outputs),
    )
}

/// Batch Bayesian optimization: maximizes the model's first output over
/// the support of `dists`.
pub fn run_bayesian_optimization(
    objective: &ModelSpec,
    dists: &[Dist],
    cfg: &ActiveLearningConfig,
    rng: &mut RngStream,
) -> Result<BoResult, Error> {
    cfg.validate()?;
    validate_priors(dists)?;
    objective.validate()?;

    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut outputs: Vec<f64> = Vec::new();
    let warmup_points = latin_hypercube(cfg.warmup, dists, rng)?;
    let mut failures =
        evaluate_points(objective, &warmup_points, cfg.max_concurrency, &mut inputs, &mut outputs)?;

    let mut trace: Vec<IterationTrace> = Vec::new();
    let mut metric_history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut aborted = None;

    for iteration in 1..=cfg.outer_iterations {
        let data = dataset_from(&inputs, &outputs)?;
        let gp = match train_gp(&data, &cfg.trainer, rng) {
            Ok((gp, _)) => gp,
            Err(e) => {
                log::error!("surrogate training failed at iteration {iteration}: {e}");
                aborted = Some(format!("surrogate training failed: {e}"));
                break;
            }
        };
        let pool = monte_carlo(cfg.candidate_pool_size, dists, rng)?;
        let pred = gp.predict(&pool, false)?;
        let stds = pred.std();
        let incumbent = outputs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut scores = Vec::with_capacity(pool.nrows());
        for i in 0..pool.nrows() {
            let candidate: Vec<f64> = pool.row(i).iter().copied().collect();
            scores.push(score_candidate(
                &cfg.acquisition,
                pred.mean[i],
                stds[i],
                &candidate,
                incumbent,
                &data,
            )?);
        }
        let max_acquisition = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        metric_history.push(max_acquisition);
        let smoothed_acquisition = smoothed(&metric_history);

        let selected =
            select_batch_from_scores(&scores, &pool, cfg.batch_size, &gp.length_scales())?;
        let mut batch = DMatrix::zeros(selected.len(), pool.ncols());
        for (r, &i) in selected.iter().enumerate() {
            batch.set_row(r, &pool.row(i));
        }
        let batch_failures =
            evaluate_points(objective, &batch, cfg.max_concurrency, &mut inputs, &mut outputs)?;
        failures += batch_failures;
        trace.push(IterationTrace {
            iteration,
            max_acquisition,
            smoothed_acquisition,
            batch,
            failures: batch_failures,
        });
        if let Some(tol) = cfg.convergence_tol {
            if metric_history.len() >= 5 && smoothed_acquisition < tol {
                converged = true;
                break;
            }
        }
    }

    let evaluations = dataset_from(&inputs, &outputs)?;
    let best = outputs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite outputs"))
        .expect("at least two evaluations");
    Ok(BoResult {
        best_point: inputs[best.0].clone(),
        best_value: *best.1,
        evaluations,
        trace,
        failures,
        converged,
        aborted,
    })
}

/// Runs the model at `theta` against every experimental configuration
/// (one harness batch for all points x configurations) and reduces each
/// point's outputs to a log-likelihood training value. Returns
/// `(accepted inputs, log-likelihoods, failures)`.
fn likelihood_training_values(
    model: &ModelSpec,
    points: &DMatrix<f64>,
    data: &ExperimentalDataset,
    likelihood: &LikelihoodSpec,
    max_concurrency: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, usize), Error> {
    let n_exp = data.len();
    let dim = points.ncols();
    let mut requests = Vec::with_capacity(points.nrows() * n_exp);
    for k in 0..points.nrows() {
        let theta: Vec<f64> = points.row(k).iter().take(dim - 1).copied().collect();
        for i in 0..n_exp {
            requests.push(
                EvaluationRequest::new((k * n_exp + i) as u64, theta.clone())
                    .with_configuration(data.configuration(i)),
            );
        }
    }
    let records = evaluate_batch(model, &requests, max_concurrency)?;
    let mut inputs = Vec::new();
    let mut values = Vec::new();
    let mut failures = 0usize;
    for k in 0..points.nrows() {
        let group = &records[k * n_exp..(k + 1) * n_exp];
        let sigma = points[(k, dim - 1)];
        let outputs: Option<Vec<f64>> = group
            .iter()
            .map(|r| (r.status == EvalStatus::Ok).then(|| r.outputs[0]))
            .collect();
        let ll = outputs
            .ok_or_else(|| Error::ModelEvaluation("configuration run failed".into()))
            .and_then(|outputs| log_likelihood(sigma, &outputs, data, likelihood));
        match ll {
            Ok(value) if value.is_finite() => {
                inputs.push(points.row(k).iter().copied().collect());
                values.push(value);
            }
            Ok(value) => {
                failures += 1;
                log::warn!("non-finite log-likelihood {value} at a selected point; dropped");
            }
            Err(e) => {
                failures += 1;
                log::warn!("selected point dropped: {e}");
            }
        }
    }
    Ok((inputs, values, failures))
}

/// Likelihood-targeted active learning: trains a surrogate of the data
/// log-likelihood over `(theta.., sigma_eps)` drawn from `priors` (noise
/// prior last). Each selected point fans out to one concurrent model run
/// per experimental configuration. When `save_path` is set the final
/// surrogate is serialized there.
pub fn run_bayesian_active_learning(
    model: &ModelSpec,
    data: &ExperimentalDataset,
    likelihood: &LikelihoodSpec,
    priors: &[Dist],
    cfg: &ActiveLearningConfig,
    save_path: Option<&std::path::Path>,
    rng: &mut RngStream,
) -> Result<BalResult, Error> {
    cfg.validate()?;
    validate_priors(priors)?;
    model.validate()?;
    likelihood.validate()?;
    if priors.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least one parameter prior plus the noise-scale prior".into(),
        ));
    }
    let sigma_support = priors.last().expect("non-empty").support();
    if sigma_support.0 < 0.0 {
        return Err(Error::InvalidConfig(
            "the noise-scale prior (last entry) must not allow negative values".into(),
        ));
    }

    let warmup_points = latin_hypercube(cfg.warmup, priors, rng)?;
    let (mut inputs, mut values, mut failures) =
        likelihood_training_values(model, &warmup_points, data, likelihood, cfg.max_concurrency)?;

    let mut trace: Vec<IterationTrace> = Vec::new();
    let mut metric_history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut aborted = None;

    for iteration in 1..=cfg.outer_iterations {
        let train = dataset_from(&inputs, &values)?;
        let gp = match train_gp(&train, &cfg.trainer, rng) {
            Ok((gp, _)) => gp,
            Err(e) => {
                log::error!("surrogate training failed at iteration {iteration}: {e}");
                aborted = Some(format!("surrogate training failed: {e}"));
                break;
            }
        };
        let pool = monte_carlo(cfg.candidate_pool_size, priors, rng)?;
        let pred = gp.predict(&pool, false)?;
        let stds = pred.std();
        let incumbent = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut scores = Vec::with_capacity(pool.nrows());
        for i in 0..pool.nrows() {
            let candidate: Vec<f64> = pool.row(i).iter().copied().collect();
            scores.push(score_candidate(
                &cfg.acquisition,
                pred.mean[i],
                stds[i],
                &candidate,
                incumbent,
                &train,
            )?);
        }
        let max_acquisition = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        metric_history.push(max_acquisition);
        let smoothed_acquisition = smoothed(&metric_history);

        let selected =
            select_batch_from_scores(&scores, &pool, cfg.batch_size, &gp.length_scales())?;
        let mut batch = DMatrix::zeros(selected.len(), pool.ncols());
        for (r, &i) in selected.iter().enumerate() {
            batch.set_row(r, &pool.row(i));
        }
        let (new_inputs, new_values, batch_failures) =
            likelihood_training_values(model, &batch, data, likelihood, cfg.max_concurrency)?;
        inputs.extend(new_inputs);
        values.extend(new_values);
        failures += batch_failures;
        trace.push(IterationTrace {
            iteration,
            max_acquisition,
            smoothed_acquisition,
            batch,
            failures: batch_failures,
        });
        if let Some(tol) = cfg.convergence_tol {
            if metric_history.len() >= 5 && smoothed_acquisition < tol {
                converged = true;
                break;
            }
        }
    }

    let evaluations = dataset_from(&inputs, &values)?;
    let (surrogate, _) = train_gp(&evaluations, &cfg.trainer, rng)?;
    if let Some(path) = save_path {
        surrogate.save(path)?;
    }
    Ok(BalResult { surrogate, evaluations, trace, failures, converged, aborted })
}

/// Ensemble move family for the MCMC drivers.
#[derive(Clone, Debug)]
pub enum EnsembleSampler {
    /// Affine-invariant stretch move with scale `a >= 1`.
    Stretch { a: f64 },
    /// Differential evolution; `gamma = None` uses the dimension-scaled
    /// default, `jitter` is the uniform jitter half-width `b`.
    DifferentialEvolution { gamma: Option<f64>, jitter: f64 },
}

#[derive(Clone, Debug)]
pub struct McmcConfig {
    pub sampler: EnsembleSampler,
    pub walkers: usize,
    /// Total ensemble steps taken.
    pub iterations: usize,
    /// Leading steps discarded from the returned chains.
    pub burn_in: usize,
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let needed = match self.sampler {
            EnsembleSampler::Stretch { .. } => 2,
            EnsembleSampler::DifferentialEvolution { .. } => 3,
        };
        if self.walkers < needed {
            return Err(Error::InsufficientChains { needed, got: self.walkers });
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "need burn_in < iterations, got {} >= {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }
}

/// Posterior sample produced by an ensemble run; the same shape comes
/// back whether the target was the true model or a surrogate.
#[derive(Debug)]
pub struct McmcRun {
    /// One `(iterations - burn_in) x dim` matrix per walker.
    pub chains: Vec<DMatrix<f64>>,
    pub acceptance_rate: f64,
    /// Per-parameter potential scale reduction over the walker chains;
    /// None when fewer than four post-burn-in steps were kept.
    pub gelman_rubin: Option<DVector<f64>>,
    pub posterior_mean: DVector<f64>,
    pub posterior_std: DVector<f64>,
    /// Rows pushed through the log-posterior (initialization included).
    pub target_evaluations: usize,
}

/// Drives an ensemble sampler over an arbitrary batch log-posterior.
pub fn run_ensemble_mcmc(
    mut log_posterior_batch: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    init: DMatrix<f64>,
    cfg: &McmcConfig,
    rng: &mut RngStream,
) -> Result<McmcRun, Error> {
    cfg.validate()?;
    if init.nrows() != cfg.walkers {
        return Err(Error::DimensionMismatch(format!(
            "{} initial positions for {} walkers",
            init.nrows(),
            cfg.walkers
        )));
    }
    let dim = init.ncols();
    let mut calls = 0usize;
    let mut counted = |m: &DMatrix<f64>| {
        calls += m.nrows();
        log_posterior_batch(m)
    };
    let mut state = EnsembleState::new(init, &mut counted)?;
    let kept = cfg.iterations - cfg.burn_in;
    let mut chains: Vec<DMatrix<f64>> =
        (0..cfg.walkers).map(|_| DMatrix::zeros(kept, dim)).collect();
    let mut accepted = 0usize;
    let mut proposals = 0usize;
    for step in 0..cfg.iterations {
        let before: usize = state.acceptance_counts.iter().sum();
        state = match cfg.sampler {
            EnsembleSampler::Stretch { a } => stretch_move_step(&state, &mut counted, a, rng)?,
            EnsembleSampler::DifferentialEvolution { gamma, jitter } => {
                differential_evolution_step(&state, &mut counted, gamma, jitter, rng)?
            }
        };
        accepted += state.acceptance_counts.iter().sum::<usize>() - before;
        proposals += cfg.walkers;
        if step >= cfg.burn_in {
            let row = step - cfg.burn_in;
            for w in 0..cfg.walkers {
                for j in 0..dim {
                    chains[w][(row, j)] = state.positions[(w, j)];
                }
            }
        }
    }
    let pooled_rows = (kept * cfg.walkers) as f64;
    let mut posterior_mean = DVector::zeros(dim);
    for chain in &chains {
        for r in 0..kept {
            for j in 0..dim {
                posterior_mean[j] += chain[(r, j)];
            }
        }
    }
    posterior_mean /= pooled_rows;
    let mut posterior_std = DVector::zeros(dim);
    for chain in &chains {
        for r in 0..kept {
            for j in 0..dim {
                posterior_std[j] += (chain[(r, j)] - posterior_mean[j]).powi(2);
            }
        }
    }
    posterior_std = posterior_std.map(|v: f64| (v / (pooled_rows - 1.0)).sqrt());
    let gr = if kept >= 4 && cfg.walkers >= 2 {
        Some(gelman_rubin(&chains)?)
    } else {
        None
    };
    Ok(McmcRun {
        chains,
        acceptance_rate: accepted as f64 / proposals as f64,
        gelman_rubin: gr,
        posterior_mean,
        posterior_std,
        target_evaluations: calls,
    })
}

/// Ensemble MCMC whose log-posterior is the surrogate's mean prediction
/// plus the log-prior; the expensive model is never touched. Walkers are
/// initialized from the priors and proposals outside their support are
/// rejected outright.
pub fn run_surrogate_mcmc(
    surrogate: &dyn Surrogate,
    priors: &[Dist],
    cfg: &McmcConfig,
    rng: &mut RngStream,
) -> Result<McmcRun, Error> {
    validate_priors(priors)?;
    if surrogate.input_dim() != priors.len() {
        return Err(Error::DimensionMismatch(format!(
            "surrogate expects {} inputs, got {} priors",
            surrogate.input_dim(),
            priors.len()
        )));
    }
    if surrogate.output_dim() != 1 {
        return Err(Error::InvalidConfig(
            "surrogate MCMC needs a scalar-output surrogate".into(),
        ));
    }
    cfg.validate()?;
    let dim = priors.len();
    let mut init = DMatrix::zeros(cfg.walkers, dim);
    for w in 0..cfg.walkers {
        for (j, prior) in priors.iter().enumerate() {
            init[(w, j)] = prior.sample(rng);
        }
    }
    let target = |positions: &DMatrix<f64>| -> Result<DVector<f64>, Error> {
        let pred = surrogate.predict(positions, false)?;
        let mut lp = DVector::zeros(positions.nrows());
        for i in 0..positions.nrows() {
            let row: Vec<f64> = positions.row(i).iter().copied().collect();
            let prior = joint_ln_pdf(priors, &row);
            lp[i] = if prior == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                pred.mean[i] + prior
            };
        }
        Ok(lp)
    };
    run_ensemble_mcmc(target, init, cfg, rng)
}
