//! Workflow execution: each function turns a validated configuration
//! into artifacts under the output directory plus a JSON results block
//! for the run summary. Nothing here prints; the summary is the record.

use std::cell::Cell;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use prouq::bayes::{empirical_quantile, log_posterior, ExperimentalDataset};
use prouq::diagnostics::{calibration_curve, uncertainty_metrics};
use prouq::error::Error;
use prouq::gp::{train_gp, GpModel};
use prouq::harness::{evaluate_batch, EvalStatus, EvaluationRequest, ModelSpec};
use prouq::learner::{
    run_bayesian_active_learning, run_bayesian_optimization, run_ensemble_mcmc,
    run_surrogate_mcmc, IterationTrace, McmcRun,
};
use prouq::pca::fit_pca;
use prouq::samplers::{
    active_learning_subset_simulation, adaptive_importance_sampling, latin_hypercube,
    monte_carlo, subset_simulation, AisConfig, AlSubsetConfig, SubsetConfig, SubsetState,
};
use prouq::surrogate::Surrogate;
use prouq::{Dataset, Dist, RngStream};

use crate::config::{RunConfig, SamplerSection, Workflow};
use crate::output::{
    read_numeric_csv, split_column, write_chains_jsonl, write_csv, write_json,
};

pub struct Outcome {
    pub results: serde_json::Value,
    /// Set when a driver stopped early with partial history; artifacts
    /// are still written and the exit code reports a numerical failure.
    pub abort: Option<String>,
}

impl Outcome {
    fn ok(results: serde_json::Value) -> Self {
        Self { results, abort: None }
    }
}

pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Error> {
    std::fs::create_dir_all(out_dir)?;
    let mut rng = RngStream::new(cfg.seed, 0);
    match cfg.workflow {
        Workflow::TrainSurrogate => train_surrogate(cfg, out_dir, &mut rng),
        Workflow::Predict => predict(cfg, out_dir),
        Workflow::ForwardUq => forward_uq(cfg, out_dir, &mut rng),
        Workflow::InverseUq => inverse_uq(cfg, out_dir, &mut rng),
        Workflow::BayesianOptimization => bayesian_optimization(cfg, out_dir, &mut rng),
        Workflow::BayesianActiveLearning => bayesian_active_learning(cfg, out_dir, &mut rng),
        Workflow::SurrogateMcmc => surrogate_mcmc(cfg, out_dir, &mut rng),
        Workflow::Pca => pca(cfg, out_dir),
    }
}

fn quantiles_json(values: &[f64]) -> serde_json::Value {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    json!({
        "p025": empirical_quantile(&sorted, 0.025),
        "p25": empirical_quantile(&sorted, 0.25),
        "median": empirical_quantile(&sorted, 0.5),
        "p75": empirical_quantile(&sorted, 0.75),
        "p975": empirical_quantile(&sorted, 0.975),
    })
}

fn column_summary(values: &[f64]) -> serde_json::Value {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    json!({
        "count": values.len(),
        "mean": mean,
        "std": var.sqrt(),
        "min": values.iter().cloned().fold(f64::INFINITY, f64::min),
        "max": values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "quantiles": quantiles_json(values),
    })
}

/// Evaluates design rows through the harness; returns per-row outputs
/// (None for failures) and enforces a uniform output width.
fn evaluate_design(
    model: &ModelSpec,
    rows: &DMatrix<f64>,
    max_concurrency: usize,
) -> Result<(Vec<Option<Vec<f64>>>, usize), Error> {
    let requests: Vec<EvaluationRequest> = (0..rows.nrows())
        .map(|i| EvaluationRequest::new(i as u64, rows.row(i).iter().copied().collect()))
        .collect();
    let records = evaluate_batch(model, &requests, max_concurrency)?;
    let mut outputs = Vec::with_capacity(records.len());
    let mut failures = 0usize;
    let mut width: Option<usize> = None;
    for record in &records {
        if record.status == EvalStatus::Ok {
            match width {
                None => width = Some(record.outputs.len()),
                Some(w) if w != record.outputs.len() => {
                    return Err(Error::ModelEvaluation(format!(
                        "inconsistent output widths: {} then {}",
                        w,
                        record.outputs.len()
                    )));
                }
                _ => {}
            }
            outputs.push(Some(record.outputs.clone()));
        } else {
            failures += 1;
            log::warn!(
                "evaluation {} {:?}: {}",
                record.request_id,
                record.status,
                record.message.as_deref().unwrap_or("no detail")
            );
            outputs.push(None);
        }
    }
    Ok((outputs, failures))
}

/// Scalar-response closure for the sampling engines; any evaluation
/// failure is fatal because dropped rows would bias the estimators.
fn response_closure<'a>(
    model: &'a ModelSpec,
    max_concurrency: usize,
    calls: &'a Cell<usize>,
) -> impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error> + 'a {
    move |x: &DMatrix<f64>| {
        let requests: Vec<EvaluationRequest> = (0..x.nrows())
            .map(|i| EvaluationRequest::new(i as u64, x.row(i).iter().copied().collect()))
            .collect();
        let records = evaluate_batch(model, &requests, max_concurrency)?;
        calls.set(calls.get() + records.len());
        let mut out = DVector::zeros(records.len());
        for (i, record) in records.iter().enumerate() {
            if record.status != EvalStatus::Ok || record.outputs.is_empty() {
                return Err(Error::ModelEvaluation(format!(
                    "evaluation {} {:?}: {}",
                    record.request_id,
                    record.status,
                    record.message.as_deref().unwrap_or("no detail")
                )));
            }
            out[i] = record.outputs[0];
        }
        Ok(out)
    }
}

fn levels_csv(out_dir: &Path, levels: &[SubsetState]) -> Result<(), Error> {
    let headers =
        vec!["subset_index".to_string(), "threshold".to_string(), "population".to_string()];
    let rows: Vec<Vec<f64>> = levels
        .iter()
        .map(|l| vec![l.subset_index as f64, l.threshold, l.samples.nrows() as f64])
        .collect();
    write_csv(&out_dir.join("levels.csv"), &headers, &rows)
}

fn forward_uq(cfg: &RunConfig, out_dir: &Path, rng: &mut RngStream) -> Result<Outcome, Error> {
    let model = cfg.model.as_ref().expect("validated");
    let dists = cfg.distributions.as_deref().expect("validated");
    let sampler = cfg.sampler.as_ref().expect("validated");
    let results = match *sampler {
        SamplerSection::MonteCarlo { samples } | SamplerSection::LatinHypercube { samples } => {
            let design = match sampler {
                SamplerSection::MonteCarlo { .. } => monte_carlo(samples, dists, rng)?,
                _ => latin_hypercube(samples, dists, rng)?,
            };
            let (outputs, failures) = evaluate_design(model, &design, cfg.max_concurrency)?;
            let succeeded: Vec<(usize, &Vec<f64>)> = outputs
                .iter()
                .enumerate()
                .filter_map(|(i, o)| o.as_ref().map(|v| (i, v)))
                .collect();
            if succeeded.is_empty() {
                return Err(Error::ModelEvaluation("every evaluation failed".into()));
            }
            let width = succeeded[0].1.len();
            let mut headers: Vec<String> =
                (0..design.ncols()).map(|j| format!("x{j}")).collect();
            headers.extend((0..width).map(|j| format!("y{j}")));
            let rows: Vec<Vec<f64>> = succeeded
                .iter()
                .map(|(i, out)| {
                    design.row(*i).iter().copied().chain(out.iter().copied()).collect()
                })
                .collect();
            write_csv(&out_dir.join("samples.csv"), &headers, &rows)?;

            let mut per_output = Vec::new();
            for j in 0..width {
                let column: Vec<f64> = succeeded.iter().map(|(_, out)| out[j]).collect();
                per_output.push(column_summary(&column));
            }
            let mut results = json!({
                "samples": samples,
                "failures": failures,
                "outputs": per_output,
            });
            if let Some(failure) = &cfg.failure {
                let first: Vec<f64> = succeeded.iter().map(|(_, out)| out[0]).collect();
                let hits = first.iter().filter(|v| failure.is_failure(**v)).count();
                let n = first.len() as f64;
                let p = hits as f64 / n;
                results["exceedance"] = json!({
                    "probability": p,
                    "standard_error": (p * (1.0 - p) / n).sqrt(),
                    "count": hits,
                });
            }
            results
        }
        SamplerSection::Importance {
            adaptation_samples,
            estimation_samples,
            proposal_scale,
        } => {
            let calls = Cell::new(0usize);
            let ais_cfg = AisConfig {
                adaptation_samples,
                estimation_samples,
                failure: *cfg.failure.as_ref().expect("validated"),
                proposal_scale,
            };
            let result = adaptive_importance_sampling(
                response_closure(model, cfg.max_concurrency, &calls),
                dists,
                &ais_cfg,
                rng,
            )?;
            json!({
                "failure_probability": result.failure_probability,
                "cov": result.cov,
                "standard_error": result.failure_probability * result.cov,
                "effective_sample_size": result.effective_sample_size,
                "model_calls": result.model_calls,
                "adaptation_points": result.adaptation_points,
            })
        }
        SamplerSection::Subset { samples_per_subset, p0, max_subsets, chains, proposal_scale } => {
            let calls = Cell::new(0usize);
            let subset_cfg = SubsetConfig {
                samples_per_subset,
                p0,
                max_subsets,
                chains,
                failure: *cfg.failure.as_ref().expect("validated"),
                proposal_scale,
            };
            let result = subset_simulation(
                response_closure(model, cfg.max_concurrency, &calls),
                dists,
                &subset_cfg,
                rng,
            )?;
            levels_csv(out_dir, &result.levels)?;
            json!({
                "failure_probability": result.failure_probability,
                "cov": result.cov,
                "levels": result.levels.len(),
                "converged": result.converged,
                "model_calls": result.model_calls,
            })
        }
        SamplerSection::ActiveSubset {
            samples_per_subset,
            p0,
            max_subsets,
            chains,
            proposal_scale,
            warmup_samples,
            u_threshold,
            train_iterations,
        } => {
            let calls = Cell::new(0usize);
            let al_cfg = AlSubsetConfig {
                subset: SubsetConfig {
                    samples_per_subset,
                    p0,
                    max_subsets,
                    chains,
                    failure: *cfg.failure.as_ref().expect("validated"),
                    proposal_scale,
                },
                warmup_samples,
                u_threshold,
                train_iterations,
            };
            let result = active_learning_subset_simulation(
                response_closure(model, cfg.max_concurrency, &calls),
                dists,
                &al_cfg,
                rng,
            )?;
            levels_csv(out_dir, &result.levels)?;
            json!({
                "failure_probability": result.failure_probability,
                "cov": result.cov,
                "levels": result.levels.len(),
                "converged": result.converged,
                "model_calls": result.model_calls,
                "warmup_calls": result.warmup_calls,
                "surrogate_served": result.gp_calls,
            })
        }
    };
    Ok(Outcome::ok(results))
}

fn mcmc_results(run: &McmcRun, model_calls: usize, failed_rows: usize) -> serde_json::Value {
    let dim = run.posterior_mean.len();
    let kept = run.chains.first().map_or(0, |c| c.nrows());
    let mut q025 = Vec::with_capacity(dim);
    let mut median = Vec::with_capacity(dim);
    let mut q975 = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut pooled: Vec<f64> = run
            .chains
            .iter()
            .flat_map(|c| c.column(j).iter().copied().collect::<Vec<f64>>())
            .collect();
        pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        q025.push(empirical_quantile(&pooled, 0.025));
        median.push(empirical_quantile(&pooled, 0.5));
        q975.push(empirical_quantile(&pooled, 0.975));
    }
    json!({
        "posterior_mean": run.posterior_mean.iter().copied().collect::<Vec<f64>>(),
        "posterior_std": run.posterior_std.iter().copied().collect::<Vec<f64>>(),
        "quantiles": {"p025": q025, "median": median, "p975": q975},
        "acceptance_rate": run.acceptance_rate,
        "gelman_rubin": run
            .gelman_rubin
            .as_ref()
            .map(|g| g.iter().copied().collect::<Vec<f64>>()),
        "walkers": run.chains.len(),
        "kept_steps": kept,
        "dim": dim,
        "target_evaluations": run.target_evaluations,
        "model_calls": model_calls,
        "failed_rows": failed_rows,
    })
}

fn check_noise_prior(priors: &[Dist]) -> Result<(), Error> {
    let support = priors.last().expect("validated non-empty").support();
    if support.0 < 0.0 {
        return Err(Error::InvalidConfig(
            "the noise-scale prior (last entry) must not allow negative values".into(),
        ));
    }
    Ok(())
}

fn inverse_uq(cfg: &RunConfig, out_dir: &Path, rng: &mut RngStream) -> Result<Outcome, Error> {
    let model = cfg.model.as_ref().expect("validated");
    let section = cfg.data.as_ref().expect("validated");
    let likelihood = cfg.likelihood.as_ref().expect("validated");
    let priors = cfg.priors.as_deref().expect("validated");
    check_noise_prior(priors)?;
    let (data, _config_names) =
        ExperimentalDataset::from_csv(&section.csv, &section.observation_column)?;
    let mcmc_cfg = cfg.mcmc.as_ref().expect("validated").to_core();

    let dim = priors.len();
    let n_exp = data.len();
    let mut init = DMatrix::zeros(mcmc_cfg.walkers, dim);
    for w in 0..mcmc_cfg.walkers {
        for (j, prior) in priors.iter().enumerate() {
            init[(w, j)] = prior.sample(rng);
        }
    }

    let model_calls = Cell::new(0usize);
    let failed_rows = Cell::new(0usize);
    let mut target = |positions: &DMatrix<f64>| -> Result<DVector<f64>, Error> {
        let mut lp = DVector::from_element(positions.nrows(), f64::NEG_INFINITY);
        // Proposals dead under the priors never reach the model.
        let alive: Vec<usize> = (0..positions.nrows())
            .filter(|&i| {
                let row: Vec<f64> = positions.row(i).iter().copied().collect();
                prouq::distributions::joint_ln_pdf(priors, &row).is_finite()
            })
            .collect();
        if alive.is_empty() {
            return Ok(lp);
        }
        let mut requests = Vec::with_capacity(alive.len() * n_exp);
        for (k, &i) in alive.iter().enumerate() {
            let theta: Vec<f64> = positions.row(i).iter().take(dim - 1).copied().collect();
            for e in 0..n_exp {
                requests.push(
                    EvaluationRequest::new((k * n_exp + e) as u64, theta.clone())
                        .with_configuration(data.configuration(e)),
                );
            }
        }
        let records = evaluate_batch(model, &requests, cfg.max_concurrency)?;
        model_calls.set(model_calls.get() + records.len());
        for (k, &i) in alive.iter().enumerate() {
            let group = &records[k * n_exp..(k + 1) * n_exp];
            let outputs: Option<Vec<f64>> = group
                .iter()
                .map(|r| {
                    (r.status == EvalStatus::Ok && !r.outputs.is_empty())
                        .then(|| r.outputs[0])
                })
                .collect();
            match outputs {
                Some(outputs) => {
                    let theta: Vec<f64> =
                        positions.row(i).iter().take(dim - 1).copied().collect();
                    let sigma = positions[(i, dim - 1)];
                    lp[i] = log_posterior(&theta, sigma, &outputs, &data, likelihood, priors)?;
                }
                None => {
                    // A failed run rejects the proposal instead of
                    // aborting the chain; the count is reported.
                    failed_rows.set(failed_rows.get() + 1);
                    log::warn!("model failure at a proposal; treating as zero posterior");
                }
            }
        }
        Ok(lp)
    };

    let run = run_ensemble_mcmc(&mut target, init, &mcmc_cfg, rng)?;
    write_chains_jsonl(&out_dir.join("chains.jsonl"), &run)?;
    Ok(Outcome::ok(mcmc_results(&run, model_calls.get(), failed_rows.get())))
}

fn surrogate_mcmc(cfg: &RunConfig, out_dir: &Path, rng: &mut RngStream) -> Result<Outcome, Error> {
    let path = &cfg.surrogate.as_ref().expect("validated").path;
    let priors = cfg.priors.as_deref().expect("validated");
    let surrogate = GpModel::load(path)?;
    let mcmc_cfg = cfg.mcmc.as_ref().expect("validated").to_core();
    let run = run_surrogate_mcmc(&surrogate, priors, &mcmc_cfg, rng)?;
    write_chains_jsonl(&out_dir.join("chains.jsonl"), &run)?;
    Ok(Outcome::ok(mcmc_results(&run, 0, 0)))
}

fn trace_csv(out_dir: &Path, trace: &[IterationTrace]) -> Result<(), Error> {
    let headers = vec![
        "iteration".to_string(),
        "max_acquisition".to_string(),
        "smoothed_acquisition".to_string(),
        "failures".to_string(),
    ];
    let rows: Vec<Vec<f64>> = trace
        .iter()
        .map(|t| {
            vec![t.iteration as f64, t.max_acquisition, t.smoothed_acquisition, t.failures as f64]
        })
        .collect();
    write_csv(&out_dir.join("trace.csv"), &headers, &rows)
}

fn evaluations_csv(out_dir: &Path, data: &Dataset, output_name: &str) -> Result<(), Error> {
    let mut headers: Vec<String> = (0..data.input_dim()).map(|j| format!("x{j}")).collect();
    headers.push(output_name.to_string());
    let rows: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            let mut row: Vec<f64> = data.inputs().row(i).iter().copied().collect();
            row.push(data.outputs()[(i, 0)]);
            row
        })
        .collect();
    write_csv(&out_dir.join("evaluations.csv"), &headers, &rows)
}

fn bayesian_optimization(
    cfg: &RunConfig,
    out_dir: &Path,
    rng: &mut RngStream,
) -> Result<Outcome, Error> {
    let model = cfg.model.as_ref().expect("validated");
    let dists = cfg.distributions.as_deref().expect("validated");
    let driver = cfg.driver.as_ref().expect("validated").to_core(
        cfg.acquisition.clone().expect("validated"),
        cfg.trainer.clone().unwrap_or_default().to_core(),
        cfg.max_concurrency,
    );
    let result = run_bayesian_optimization(model, dists, &driver, rng)?;
    trace_csv(out_dir, &result.trace)?;
    evaluations_csv(out_dir, &result.evaluations, "y")?;
    let results = json!({
        "best_point": result.best_point,
        "best_value": result.best_value,
        "evaluations": result.evaluations.len(),
        "failures": result.failures,
        "iterations_run": result.trace.len(),
        "converged": result.converged,
        "aborted": result.aborted,
    });
    Ok(Outcome { results, abort: result.aborted })
}

fn bayesian_active_learning(
    cfg: &RunConfig,
    out_dir: &Path,
    rng: &mut RngStream,
) -> Result<Outcome, Error> {
    let model = cfg.model.as_ref().expect("validated");
    let section = cfg.data.as_ref().expect("validated");
    let likelihood = cfg.likelihood.as_ref().expect("validated");
    let priors = cfg.priors.as_deref().expect("validated");
    let (data, _config_names) =
        ExperimentalDataset::from_csv(&section.csv, &section.observation_column)?;
    let driver = cfg.driver.as_ref().expect("validated").to_core(
        cfg.acquisition.clone().expect("validated"),
        cfg.trainer.clone().unwrap_or_default().to_core(),
        cfg.max_concurrency,
    );
    let surrogate_path = out_dir.join("surrogate.pqm");
    let result = run_bayesian_active_learning(
        model,
        &data,
        likelihood,
        priors,
        &driver,
        Some(&surrogate_path),
        rng,
    )?;
    trace_csv(out_dir, &result.trace)?;
    evaluations_csv(out_dir, &result.evaluations, "log_likelihood")?;
    let results = json!({
        "surrogate": surrogate_path.file_name().and_then(|s| s.to_str()),
        "evaluations": result.evaluations.len(),
        "failures": result.failures,
        "iterations_run": result.trace.len(),
        "converged": result.converged,
        "aborted": result.aborted,
        "observations": data.len(),
    });
    Ok(Outcome { results, abort: result.aborted })
}

fn train_surrogate(cfg: &RunConfig, out_dir: &Path, rng: &mut RngStream) -> Result<Outcome, Error> {
    let section = cfg.train.as_ref().expect("validated");
    let (headers, rows) = read_numeric_csv(&section.csv)?;
    let (input_names, inputs, outputs) = split_column(&headers, &rows, &section.output_column)?;
    let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
    let data = Dataset::univariate(
        DMatrix::from_row_slice(inputs.len(), input_names.len(), &flat),
        DVector::from_column_slice(&outputs),
    )?;
    let trainer = cfg.trainer.clone().unwrap_or_default().to_core();
    let (model, report) = train_gp(&data, &trainer, rng)?;
    let path = out_dir.join("surrogate.pqm");
    model.save(&path)?;
    Ok(Outcome::ok(json!({
        "surrogate": "surrogate.pqm",
        "points": data.len(),
        "input_columns": input_names,
        "output_column": section.output_column,
        "final_log_marginal": report.final_log_marginal,
        "length_scales": model.length_scales(),
    })))
}

fn predict(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Error> {
    let surrogate = GpModel::load(&cfg.surrogate.as_ref().expect("validated").path)?;
    let section = cfg.predict.as_ref().expect("validated");
    let (headers, rows) = read_numeric_csv(&section.inputs_csv)?;
    let (input_names, inputs, truths) = match &section.truth_column {
        Some(column) => {
            let (names, inputs, truths) = split_column(&headers, &rows, column)?;
            (names, inputs, Some(truths))
        }
        None => (headers.clone(), rows.clone(), None),
    };
    if input_names.len() != surrogate.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "surrogate expects {} inputs, file provides {} ({})",
            surrogate.input_dim(),
            input_names.len(),
            input_names.join(", ")
        )));
    }
    let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
    let design = DMatrix::from_row_slice(inputs.len(), input_names.len(), &flat);
    let prediction = surrogate.predict(&design, false)?;
    let stds = prediction.std();

    let mut headers_out = input_names.clone();
    headers_out.push("mean".to_string());
    headers_out.push("std".to_string());
    let rows_out: Vec<Vec<f64>> = (0..design.nrows())
        .map(|i| {
            let mut row: Vec<f64> = design.row(i).iter().copied().collect();
            row.push(prediction.mean[i]);
            row.push(stds[i]);
            row
        })
        .collect();
    write_csv(&out_dir.join("predictions.csv"), &headers_out, &rows_out)?;

    let mut results = json!({
        "points": design.nrows(),
        "input_columns": input_names,
    });
    if let Some(truths) = truths {
        let means: Vec<f64> = prediction.mean.iter().copied().collect();
        let devs: Vec<f64> = stds.iter().copied().collect();
        let metrics = uncertainty_metrics(&means, &devs, &truths)?;
        let curve = calibration_curve(&means, &devs, &truths, 100)?;
        let curve_rows: Vec<Vec<f64>> = curve.iter().map(|(e, o)| vec![*e, *o]).collect();
        write_csv(
            &out_dir.join("calibration.csv"),
            &["expected".to_string(), "observed".to_string()],
            &curve_rows,
        )?;
        results["metrics"] = serde_json::to_value(&metrics)?;
    }
    Ok(Outcome::ok(results))
}

fn pca(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Error> {
    let section = cfg.pca.as_ref().expect("validated");
    let (_headers, rows) = read_numeric_csv(&section.csv)?;
    let ambient = rows[0].len();
    // One snapshot per CSV row; the decomposition wants them as columns.
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let snapshots = DMatrix::from_row_slice(rows.len(), ambient, &flat).transpose();
    let space = fit_pca(&snapshots, section.tau, section.centering)?;
    let path = out_dir.join("latent_space.pqm");
    space.save(&path)?;
    Ok(Outcome::ok(json!({
        "latent_space": "latent_space.pqm",
        "rank": space.rank(),
        "tau": space.tau(),
        "centering": section.centering,
        "ambient_dim": space.ambient_dim(),
        "snapshots": rows.len(),
        "residual_energy_ratio": space.residual_energy_ratio(space.rank()),
        "singular_values": space.singular_values().iter().copied().collect::<Vec<f64>>(),
    })))
}

/// The diagnose subcommand: uncertainty metrics for stored predictions.
pub fn diagnose(
    predictions_csv: &Path,
    truths_csv: &Path,
    out_dir: Option<&Path>,
) -> Result<serde_json::Value, Error> {
    let (pred_headers, pred_rows) = read_numeric_csv(predictions_csv)?;
    let need = |name: &str| -> Result<usize, Error> {
        pred_headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{} needs a '{name}' column; found: {}",
                predictions_csv.display(),
                pred_headers.join(", ")
            ))
        })
    };
    let mean_idx = need("mean")?;
    let std_idx = need("std")?;
    let (_truth_headers, truth_rows) = read_numeric_csv(truths_csv)?;
    if truth_rows.len() != pred_rows.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} rows, {} has {}",
            predictions_csv.display(),
            pred_rows.len(),
            truths_csv.display(),
            truth_rows.len()
        )));
    }
    let means: Vec<f64> = pred_rows.iter().map(|r| r[mean_idx]).collect();
    let stds: Vec<f64> = pred_rows.iter().map(|r| r[std_idx]).collect();
    let truths: Vec<f64> = truth_rows.iter().map(|r| r[0]).collect();
    let metrics = uncertainty_metrics(&means, &stds, &truths)?;
    let curve = calibration_curve(&means, &stds, &truths, 100)?;
    let report = json!({
        "schema_version": 1u32,
        "kind": "uncertainty_diagnostics",
        "points": means.len(),
        "metrics": serde_json::to_value(&metrics)?,
    });
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let curve_rows: Vec<Vec<f64>> = curve.iter().map(|(e, o)| vec![*e, *o]).collect();
        write_csv(
            &dir.join("calibration.csv"),
            &["expected".to_string(), "observed".to_string()],
            &curve_rows,
        )?;
        write_json(&dir.join("metrics.json"), &report)?;
    }
    Ok(report)
}
