//! Subset simulation for rare-event probability estimation, plus an
//! active-learning variant that serves most responses from a Gaussian
//! process and reserves true model calls for uncertain predictions.
//!
//! Both run in standard-normal space (each prior marginal mapped through
//! its inverse CDF), where the component-wise Metropolis chains have a
//! simple stationary density. Responses are canonicalized to exceedance
//! form, so intermediate thresholds are non-decreasing internally and
//! monotone toward the failure level in the criterion's own sense.
//!
//! Error estimator: the reported `cov` is the square root of the summed
//! per-level squared coefficients of variation,
//! `delta_j^2 = (1 - p_j) / (p_j n) * (1 + gamma_j)`, where `gamma_j`
//! accounts for within-chain autocorrelation of the level indicator:
//! `gamma_j = 2 sum_k (1 - k/L) rho_j(k)` with `L` the mean chain length
//! and `rho_j(k)` the lag-`k` indicator autocorrelation pooled over
//! chains (clamped at zero). The Monte Carlo level has `gamma = 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;

use super::{standard_normal_to_input, validate_dists, FailureCriterion};
use crate::acquisition::{evaluate_acquisition, AcquisitionKind, AcquisitionSpec};
use crate::data::Dataset;
use crate::distributions::Dist;
use crate::error::Error;
use crate::gp::{train_gp, GpModel, GpTrainer};
use crate::numerics::RngStream;
use crate::trainers::AdamConfig;

#[derive(Clone, Debug)]
pub struct SubsetConfig {
    /// Population size per subset level.
    pub samples_per_subset: usize,
    /// Conditional probability targeted by each intermediate threshold.
    /// `p0 = 1` degenerates to plain Monte Carlo exceedance estimation.
    pub p0: f64,
    /// Level budget; exceeding it returns a partial result with
    /// `converged = false`.
    pub max_subsets: usize,
    /// Markov chains per level; `None` starts one chain per seed.
    pub chains: Option<usize>,
    pub failure: FailureCriterion,
    /// Random-walk scale of the component-wise proposals.
    pub proposal_scale: f64,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        Self {
            samples_per_subset: 1000,
            p0: 0.1,
            max_subsets: 20,
            chains: None,
            failure: FailureCriterion::Above(0.0),
            proposal_scale: 1.0,
        }
    }
}

impl SubsetConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.samples_per_subset < 2 {
            return Err(Error::InvalidConfig("need at least 2 samples per subset".into()));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(Error::InvalidConfig("p0 must lie in (0, 1]".into()));
        }
        if self.max_subsets == 0 {
            return Err(Error::InvalidConfig("max_subsets must be positive".into()));
        }
        if self.chains == Some(0) {
            return Err(Error::InvalidConfig("chain count must be positive".into()));
        }
        if !(self.proposal_scale > 0.0) {
            return Err(Error::InvalidConfig("proposal scale must be positive".into()));
        }
        self.failure.validate()
    }
}

/// One subset level: its population and the threshold derived from it.
/// The final level's threshold is the failure level itself.
#[derive(Clone, Debug)]
pub struct SubsetState {
    pub subset_index: usize,
    /// Intermediate threshold in the response's own sense.
    pub threshold: f64,
    /// Population in input space, chains stored contiguously in step order.
    pub samples: DMatrix<f64>,
    /// Raw model responses for the population.
    pub responses: DVector<f64>,
    pub p0: f64,
    /// Chains that generated this population (0 for the Monte Carlo level).
    pub chains: usize,
    /// Accepted fraction of the generating chains' transitions (1 for the
    /// Monte Carlo level).
    pub acceptance_rate: f64,
    /// Conditional probability this level contributes to the product.
    pub conditional_probability: f64,
}

#[derive(Clone, Debug)]
pub struct SubsetResult {
    pub failure_probability: f64,
    /// Coefficient of variation of the estimator (infinite when the
    /// estimate is zero).
    pub cov: f64,
    pub levels: Vec<SubsetState>,
    /// False when the level budget ran out before the failure level was
    /// reached; the probability is then a partial product.
    pub converged: bool,
    pub model_calls: usize,
}

/// `total` samples split over `chains` chains: `floor` each, remainder
/// assigned round-robin from the front. Seeds count toward the lengths.
pub(crate) fn chain_lengths(total: usize, chains: usize) -> Vec<usize> {
    let base = total / chains;
    let rem = total % chains;
    (0..chains).map(|c| base + usize::from(c < rem)).collect()
}

/// Views a flat chain-grouped indicator vector as per-chain slices.
fn split_by_chains<'a>(ind: &'a [bool], layout: &[usize]) -> Vec<&'a [bool]> {
    let mut out = Vec::with_capacity(layout.len());
    let mut off = 0;
    for len in layout {
        out.push(&ind[off..off + len]);
        off += len;
    }
    out
}

/// Lag-weighted indicator autocorrelation factor of Au-Beck's estimator.
/// `chains` holds per-chain indicator sequences in step order.
fn chain_gamma(chains: &[&[bool]], p: f64) -> f64 {
    let r0 = p * (1.0 - p);
    if r0 <= 0.0 || chains.is_empty() {
        return 0.0;
    }
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mean_len = total as f64 / chains.len() as f64;
    let max_lag = chains.iter().map(|c| c.len()).max().unwrap_or(1) - 1;
    let mut gamma = 0.0;
    for k in 1..=max_lag {
        let mut acc = 0.0;
        let mut pairs = 0usize;
        for c in chains {
            if c.len() > k {
                for t in 0..c.len() - k {
                    acc += f64::from(u8::from(c[t] && c[t + k]));
                }
                pairs += c.len() - k;
            }
        }
        if pairs == 0 {
            break;
        }
        let rho = (acc / pairs as f64 - p * p) / r0;
        let weight = (1.0 - k as f64 / mean_len).max(0.0);
        gamma += 2.0 * weight * rho;
    }
    gamma.max(0.0)
}

/// Core driver. `eval` receives standard-normal-space rows alongside the
/// mapped input-space rows and returns raw responses; the plain and
/// active-learning entry points differ only in this closure.
fn run_subset(
    mut eval: impl FnMut(&DMatrix<f64>, &DMatrix<f64>) -> Result<DVector<f64>, Error>,
    dists: &[Dist],
    cfg: &SubsetConfig,
    rng: &mut RngStream,
) -> Result<SubsetResult, Error> {
    cfg.validate()?;
    validate_dists(dists)?;
    let n = cfg.samples_per_subset;
    let dim = dists.len();
    let level_canon = cfg.failure.canonical_level();
    let normal = rand_distr::StandardNormal;
    let mut calls = 0usize;

    let to_x = |z: &DMatrix<f64>| -> DMatrix<f64> {
        let mut x = DMatrix::zeros(z.nrows(), dim);
        for i in 0..z.nrows() {
            let zr: Vec<f64> = (0..dim).map(|j| z[(i, j)]).collect();
            let row = standard_normal_to_input(dists, &zr);
            for j in 0..dim {
                x[(i, j)] = row[j];
            }
        }
        x
    };
    let mut eval_canonical = |z: &DMatrix<f64>, x: &DMatrix<f64>, calls: &mut usize| {
        let raw = eval(z, x)?;
        if raw.len() != z.nrows() {
            return Err(Error::ModelEvaluation("batch response length mismatch".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation("non-finite response".into()));
        }
        *calls += z.nrows();
        Ok(DVector::from_fn(raw.len(), |i, _| cfg.failure.canonical_response(raw[i])))
    };

    // Level 0: plain Monte Carlo in standard-normal space.
    let mut z_pop = DMatrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            z_pop[(i, j)] = normal.sample(rng);
        }
    }
    let x0 = to_x(&z_pop);
    let mut g = eval_canonical(&z_pop, &x0, &mut calls)?;

    let mut levels: Vec<SubsetState> = Vec::new();
    let mut chain_layout: Vec<usize> = Vec::new();
    let mut last_acceptance = 1.0;
    let mut prob = 1.0;
    let mut delta2 = 0.0;
    let mut converged = false;

    for subset_index in 0..cfg.max_subsets {
        let x_pop = to_x(&z_pop);
        // canonical_response is an involution, so it also maps canonical
        // values back to the response's own sense.
        let raw = DVector::from_fn(n, |i, _| cfg.failure.canonical_response(g[i]));
        let frac = g.iter().filter(|v| **v > level_canon).count() as f64 / n as f64;
        let crossed = frac >= cfg.p0 || cfg.p0 >= 1.0;
        if crossed || subset_index + 1 == cfg.max_subsets {
            let indicators: Vec<bool> = g.iter().map(|v| *v > level_canon).collect();
            let gamma = if chain_layout.is_empty() {
                0.0
            } else {
                chain_gamma(&split_by_chains(&indicators, &chain_layout), frac)
            };
            if frac > 0.0 {
                delta2 += (1.0 - frac) / (frac * n as f64) * (1.0 + gamma);
            }
            prob *= frac;
            levels.push(SubsetState {
                subset_index,
                threshold: cfg.failure.canonical_response(level_canon),
                samples: x_pop,
                responses: raw,
                p0: cfg.p0,
                chains: chain_layout.len(),
                acceptance_rate: last_acceptance,
                conditional_probability: frac,
            });
            converged = crossed;
            if !converged {
                log::warn!(
                    "subset simulation hit the {}-level budget before the failure level; \
                     returning a partial estimate",
                    cfg.max_subsets
                );
            }
            break;
        }

        // Threshold at the n_seed-th largest response; ties resolved by
        // index so the run is deterministic.
        let n_seed = ((cfg.p0 * n as f64).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| g[*b].partial_cmp(&g[*a]).unwrap().then(a.cmp(b)));
        let threshold = g[order[n_seed - 1]];
        let p_cond = n_seed as f64 / n as f64;
        let indicators: Vec<bool> = g.iter().map(|v| *v >= threshold).collect();
        let gamma = if chain_layout.is_empty() {
            0.0
        } else {
            chain_gamma(&split_by_chains(&indicators, &chain_layout), p_cond)
        };
        delta2 += (1.0 - p_cond) / (p_cond * n as f64) * (1.0 + gamma);
        prob *= p_cond;
        levels.push(SubsetState {
            subset_index,
            threshold: cfg.failure.canonical_response(threshold),
            samples: x_pop,
            responses: raw,
            p0: cfg.p0,
            chains: chain_layout.len(),
            acceptance_rate: last_acceptance,
            conditional_probability: p_cond,
        });

        // Next population: component-wise Metropolis chains from evenly
        // strided seeds, run in lock-step so each step is one batch.
        let n_chains = cfg.chains.unwrap_or(n_seed).min(n_seed);
        let lens = chain_lengths(n, n_chains);
        let mut offsets = Vec::with_capacity(n_chains);
        let mut off = 0;
        for len in &lens {
            offsets.push(off);
            off += len;
        }
        let mut cur_z: Vec<DVector<f64>> = Vec::with_capacity(n_chains);
        let mut cur_g: Vec<f64> = Vec::with_capacity(n_chains);
        let mut new_z = DMatrix::zeros(n, dim);
        let mut new_g = DVector::zeros(n);
        for c in 0..n_chains {
            let seed = order[c * n_seed / n_chains];
            let z = z_pop.row(seed).transpose();
            for j in 0..dim {
                new_z[(offsets[c], j)] = z[j];
            }
            new_g[offsets[c]] = g[seed];
            cur_z.push(z);
            cur_g.push(g[seed]);
        }
        let max_len = *lens.iter().max().unwrap();
        let mut accepted = 0usize;
        let mut attempted = 0usize;
        for t in 1..max_len {
            let mut cand: Vec<(usize, DVector<f64>)> = Vec::new();
            for c in 0..n_chains {
                if t >= lens[c] {
                    continue;
                }
                attempted += 1;
                let mut zc = cur_z[c].clone();
                let mut moved = false;
                for j in 0..dim {
                    let step: f64 = normal.sample(rng);
                    let prop = zc[j] + cfg.proposal_scale * step;
                    let ln_ratio = -0.5 * (prop * prop - zc[j] * zc[j]);
                    let u: f64 = rng.random();
                    if u.ln() < ln_ratio {
                        zc[j] = prop;
                        moved = true;
                    }
                }
                if moved {
                    cand.push((c, zc));
                } else {
                    // No component moved: the chain repeats its state
                    // without spending a model call.
                    for j in 0..dim {
                        new_z[(offsets[c] + t, j)] = cur_z[c][j];
                    }
                    new_g[offsets[c] + t] = cur_g[c];
                }
            }
            if !cand.is_empty() {
                let mut zb = DMatrix::zeros(cand.len(), dim);
                for (k, (_, zc)) in cand.iter().enumerate() {
                    for j in 0..dim {
                        zb[(k, j)] = zc[j];
                    }
                }
                let xb = to_x(&zb);
                let gb = eval_canonical(&zb, &xb, &mut calls)?;
                for (k, (c, zc)) in cand.into_iter().enumerate() {
                    if gb[k] >= threshold {
                        cur_z[c] = zc;
                        cur_g[c] = gb[k];
                        accepted += 1;
                    }
                    for j in 0..dim {
                        new_z[(offsets[c] + t, j)] = cur_z[c][j];
                    }
                    new_g[offsets[c] + t] = cur_g[c];
                }
            }
        }
        last_acceptance = if attempted > 0 { accepted as f64 / attempted as f64 } else { 1.0 };
        if last_acceptance < 0.01 {
            log::warn!(
                "subset {} chains stagnated: acceptance {:.2}% < 1%",
                subset_index + 1,
                100.0 * last_acceptance
            );
        }
        z_pop = new_z;
        g = new_g;
        chain_layout = lens;
    }

    let cov = if prob > 0.0 { delta2.sqrt() } else { f64::INFINITY };
    Ok(SubsetResult { failure_probability: prob, cov, levels, converged, model_calls: calls })
}

/// Rare-event failure probability by subset simulation.
///
/// `model` receives one input-space batch per lock-step chain iteration
/// and returns one response per row; results do not depend on how the
/// caller schedules the rows internally.
pub fn subset_simulation(
    mut model: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    dists: &[Dist],
    cfg: &SubsetConfig,
    rng: &mut RngStream,
) -> Result<SubsetResult, Error> {
    run_subset(|_z, x| model(x), dists, cfg, rng)
}

#[derive(Clone, Debug)]
pub struct AlSubsetConfig {
    pub subset: SubsetConfig,
    /// Initial space-filling design evaluated with the true model.
    pub warmup_samples: usize,
    /// Predictions with `|mean - level| / sd >= u_threshold` are trusted;
    /// `0` trusts everything after warm-up, `inf` trusts nothing.
    pub u_threshold: f64,
    /// Optimizer iterations per hyperparameter re-optimization.
    pub train_iterations: usize,
}

impl Default for AlSubsetConfig {
    fn default() -> Self {
        Self {
            subset: SubsetConfig::default(),
            warmup_samples: 12,
            u_threshold: 2.0,
            train_iterations: 200,
        }
    }
}

impl AlSubsetConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.subset.validate()?;
        if self.warmup_samples < 2 {
            return Err(Error::InvalidConfig("warm-up needs at least 2 samples".into()));
        }
        if self.u_threshold < 0.0 || self.u_threshold.is_nan() {
            return Err(Error::InvalidConfig("u_threshold must be non-negative".into()));
        }
        if self.train_iterations == 0 {
            return Err(Error::InvalidConfig("train_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AlSubsetResult {
    pub failure_probability: f64,
    pub cov: f64,
    pub levels: Vec<SubsetState>,
    pub converged: bool,
    /// True-model evaluations, warm-up included.
    pub model_calls: usize,
    pub warmup_calls: usize,
    /// Responses served by the surrogate instead of the model.
    pub gp_calls: usize,
}

/// Subset simulation with a Gaussian-process response filter.
///
/// A surrogate trained in standard-normal space serves each response
/// whose distance-to-level score `|mean - level| / sd` clears
/// `u_threshold`; the rest are true model calls, appended to the
/// training set with one refit per batch (hyperparameters re-optimized
/// when the set has grown by a quarter). Warm-up and training draw from
/// a derived random substream, so the subset driver's trajectory matches
/// a plain run with the same seed wherever the responses agree.
pub fn active_learning_subset_simulation(
    mut model: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    dists: &[Dist],
    cfg: &AlSubsetConfig,
    rng: &mut RngStream,
) -> Result<AlSubsetResult, Error> {
    cfg.validate()?;
    validate_dists(dists)?;
    let dim = dists.len();
    let level = cfg.subset.failure.canonical_response(cfg.subset.failure.canonical_level());
    let u_spec = AcquisitionSpec::new(AcquisitionKind::UFunction).with_lambda(level);
    let mut gp_rng = rng.substream(rng.stream_id() ^ 0xa15b_u64.rotate_left(29));

    // Warm-up: Latin hypercube in standard-normal space.
    let z_dists = vec![Dist::Normal { mean: 0.0, std: 1.0 }; dim];
    let z_warm = super::latin_hypercube(cfg.warmup_samples, &z_dists, &mut gp_rng)?;
    let mut x_warm = DMatrix::zeros(cfg.warmup_samples, dim);
    for i in 0..cfg.warmup_samples {
        let zr: Vec<f64> = (0..dim).map(|j| z_warm[(i, j)]).collect();
        let row = standard_normal_to_input(dists, &zr);
        for j in 0..dim {
            x_warm[(i, j)] = row[j];
        }
    }
    let y_warm = model(&x_warm)?;
    if y_warm.len() != cfg.warmup_samples {
        return Err(Error::ModelEvaluation("batch response length mismatch".into()));
    }
    let mut real_calls = cfg.warmup_samples;
    let mut gp_served = 0usize;

    let trainer = GpTrainer::Adam {
        config: AdamConfig { iterations: cfg.train_iterations, ..AdamConfig::default() },
        batch_size: None,
    };
    let mut data =
        Dataset::new(z_warm, DMatrix::from_column_slice(cfg.warmup_samples, 1, y_warm.as_slice()))?;
    let (mut gp, _) = train_gp(&data, &trainer, &mut gp_rng)?;
    let mut last_optimized_len = data.len();

    let result = {
        let eval = |z: &DMatrix<f64>, x: &DMatrix<f64>| -> Result<DVector<f64>, Error> {
            let pred = gp.predict(z, false)?;
            let mut out = DVector::zeros(z.nrows());
            let mut pending: Vec<usize> = Vec::new();
            for i in 0..z.nrows() {
                let u = evaluate_acquisition(&u_spec, pred.mean[i], pred.variance[i].sqrt())?;
                if u.value >= cfg.u_threshold {
                    out[i] = pred.mean[i];
                    gp_served += 1;
                } else {
                    pending.push(i);
                }
            }
            if !pending.is_empty() {
                let mut xb = DMatrix::zeros(pending.len(), dim);
                let mut zb = DMatrix::zeros(pending.len(), dim);
                for (k, i) in pending.iter().enumerate() {
                    for j in 0..dim {
                        xb[(k, j)] = x[(*i, j)];
                        zb[(k, j)] = z[(*i, j)];
                    }
                }
                let yb = model(&xb)?;
                if yb.len() != pending.len() {
                    return Err(Error::ModelEvaluation("batch response length mismatch".into()));
                }
                real_calls += pending.len();
                for (k, i) in pending.iter().enumerate() {
                    out[*i] = yb[k];
                }
                data.append(&zb, &DMatrix::from_column_slice(yb.len(), 1, yb.as_slice()))?;
                if data.len() * 4 >= last_optimized_len * 5 {
                    let (g, _) = train_gp(&data, &trainer, &mut gp_rng)?;
                    gp = g;
                    last_optimized_len = data.len();
                } else {
                    gp = GpModel::fit(&data, gp.params().clone())?;
                }
            }
            Ok(out)
        };
        run_subset(eval, dists, &cfg.subset, rng)?
    };

    Ok(AlSubsetResult {
        failure_probability: result.failure_probability,
        cov: result.cov,
        levels: result.levels,
        converged: result.converged,
        model_calls: real_calls,
        warmup_calls: cfg.warmup_samples,
        gp_calls: gp_served,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_model() -> impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error> {
        |x: &DMatrix<f64>| Ok(DVector::from_fn(x.nrows(), |i, _| x[(i, 0)]))
    }

    fn standard_normal() -> Vec<Dist> {
        vec![Dist::Normal { mean: 0.0, std: 1.0 }]
    }

    #[test]
    fn easy_level_terminates_in_subset_zero_with_empirical_fraction() {
        let cfg = SubsetConfig {
            samples_per_subset: 500,
            failure: FailureCriterion::Above(0.0),
            ..SubsetConfig::default()
        };
        let mut rng = RngStream::new(200, 0);
        let res = subset_simulation(identity_model(), &standard_normal(), &cfg, &mut rng).unwrap();
        assert!(res.converged);
        assert_eq!(res.levels.len(), 1);
        assert_eq!(res.model_calls, 500);
        let frac =
            res.levels[0].responses.iter().filter(|v| **v > 0.0).count() as f64 / 500.0;
        assert_relative_eq!(res.failure_probability, frac, max_relative = 1e-15);
        assert_eq!(res.levels[0].chains, 0);
        assert_eq!(res.levels[0].acceptance_rate, 1.0);
    }

    #[test]
    fn p0_of_one_is_plain_monte_carlo() {
        let cfg = SubsetConfig {
            samples_per_subset: 2000,
            p0: 1.0,
            failure: FailureCriterion::Above(1.0),
            ..SubsetConfig::default()
        };
        let mut rng = RngStream::new(201, 0);
        let res = subset_simulation(identity_model(), &standard_normal(), &cfg, &mut rng).unwrap();
        assert!(res.converged);
        assert_eq!(res.levels.len(), 1);
        assert_eq!(res.model_calls, 2000);
        // Phi(-1) with a generous Monte Carlo allowance.
        let truth: f64 = 0.15865525393145705;
        let se = (truth * (1.0 - truth) / 2000.0).sqrt();
        assert!((res.failure_probability - truth).abs() < 4.0 * se);
        assert_relative_eq!(
            res.cov,
            ((1.0 - res.failure_probability) / (res.failure_probability * 2000.0)).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn four_sigma_tail_within_factor_two_over_seeds() {
        let truth = 3.167124183311986e-5; // Phi(-4)
        let cfg = SubsetConfig {
            samples_per_subset: 2000,
            p0: 0.1,
            failure: FailureCriterion::Above(4.0),
            ..SubsetConfig::default()
        };
        let mut log_errors: Vec<f64> = Vec::new();
        for seed in 0..10 {
            let mut rng = RngStream::new(202, seed);
            let res =
                subset_simulation(identity_model(), &standard_normal(), &cfg, &mut rng).unwrap();
            assert!(res.converged, "seed {seed} did not converge");
            // Thresholds climb strictly toward the failure level.
            for pair in res.levels.windows(2) {
                assert!(pair[0].threshold < pair[1].threshold);
            }
            assert_eq!(res.levels.last().unwrap().threshold, 4.0);
            assert!(res.cov.is_finite() && res.cov > 0.0);
            log_errors.push((res.failure_probability / truth).log10().abs());
        }
        log_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = log_errors[log_errors.len() / 2];
        assert!(median < 0.15, "median log10 error {median}");
        assert!(
            median < 2.0f64.log10(),
            "median outside a factor of two: {median}"
        );
    }

    #[test]
    fn below_sense_criterion_mirrors_above() {
        let cfg_above = SubsetConfig {
            samples_per_subset: 1000,
            failure: FailureCriterion::Above(2.0),
            ..SubsetConfig::default()
        };
        let cfg_below = SubsetConfig {
            samples_per_subset: 1000,
            failure: FailureCriterion::Below(-2.0),
            ..SubsetConfig::default()
        };
        let mut rng_a = RngStream::new(203, 0);
        let mut rng_b = RngStream::new(203, 0);
        let a =
            subset_simulation(identity_model(), &standard_normal(), &cfg_above, &mut rng_a)
                .unwrap();
        let negating = |x: &DMatrix<f64>| {
            Ok(DVector::from_fn(x.nrows(), |i, _| -x[(i, 0)]))
        };
        let b = subset_simulation(negating, &standard_normal(), &cfg_below, &mut rng_b).unwrap();
        // Same z-draws, mirrored responses: identical estimates, mirrored
        // thresholds in the response's own sense.
        assert_eq!(a.failure_probability.to_bits(), b.failure_probability.to_bits());
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(la.threshold, -lb.threshold);
        }
        // Below-sense thresholds decrease toward the failure level.
        for pair in b.levels.windows(2) {
            assert!(pair[0].threshold > pair[1].threshold);
        }
    }

    #[test]
    fn chain_lengths_round_robin() {
        assert_eq!(chain_lengths(10, 3), vec![4, 3, 3]);
        assert_eq!(chain_lengths(9, 3), vec![3, 3, 3]);
        assert_eq!(chain_lengths(7, 4), vec![2, 2, 2, 1]);
        assert_eq!(chain_lengths(2000, 200), vec![10; 200]);
    }

    #[test]
    fn explicit_chain_count_shapes_levels() {
        let cfg = SubsetConfig {
            samples_per_subset: 100,
            p0: 0.1,
            chains: Some(3),
            failure: FailureCriterion::Above(2.5),
            ..SubsetConfig::default()
        };
        let mut rng = RngStream::new(204, 0);
        let res = subset_simulation(identity_model(), &standard_normal(), &cfg, &mut rng).unwrap();
        assert!(res.levels.len() >= 2);
        for level in &res.levels[1..] {
            assert_eq!(level.chains, 3);
            assert_eq!(level.samples.nrows(), 100);
        }
    }

    #[test]
    fn budget_exhaustion_returns_partial_flag() {
        // Bounded response never crosses the level: every subset keeps
        // raising thresholds toward 1 without converging.
        let model = |x: &DMatrix<f64>| {
            Ok(DVector::from_fn(x.nrows(), |i, _| x[(i, 0)].tanh()))
        };
        let cfg = SubsetConfig {
            samples_per_subset: 200,
            max_subsets: 3,
            failure: FailureCriterion::Above(2.0),
            ..SubsetConfig::default()
        };
        let mut rng = RngStream::new(205, 0);
        let res = subset_simulation(model, &standard_normal(), &cfg, &mut rng).unwrap();
        assert!(!res.converged);
        assert_eq!(res.levels.len(), 3);
        assert_eq!(res.failure_probability, 0.0);
        assert!(res.cov.is_infinite());
    }

    #[test]
    fn seed_reproducibility_and_sensitivity() {
        let cfg = SubsetConfig {
            samples_per_subset: 400,
            failure: FailureCriterion::Above(2.0),
            ..SubsetConfig::default()
        };
        let run = |seed: u64| {
            let mut rng = RngStream::new(206, seed);
            subset_simulation(identity_model(), &standard_normal(), &cfg, &mut rng).unwrap()
        };
        let a = run(0);
        let b = run(0);
        let c = run(1);
        assert_eq!(a.failure_probability.to_bits(), b.failure_probability.to_bits());
        assert_eq!(a.model_calls, b.model_calls);
        assert_ne!(a.failure_probability.to_bits(), c.failure_probability.to_bits());
    }

    #[test]
    fn zero_u_threshold_stops_at_warmup_calls() {
        let cfg = AlSubsetConfig {
            subset: SubsetConfig {
                samples_per_subset: 200,
                failure: FailureCriterion::Above(1.0),
                ..SubsetConfig::default()
            },
            u_threshold: 0.0,
            warmup_samples: 12,
            train_iterations: 50,
        };
        let mut rng = RngStream::new(207, 0);
        let res = active_learning_subset_simulation(
            identity_model(),
            &standard_normal(),
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(res.model_calls, 12);
        assert_eq!(res.warmup_calls, 12);
        assert!(res.gp_calls >= 200);
    }

    #[test]
    fn infinite_u_threshold_degenerates_to_plain_run() {
        let subset = SubsetConfig {
            samples_per_subset: 300,
            failure: FailureCriterion::Above(2.0),
            ..SubsetConfig::default()
        };
        let cfg = AlSubsetConfig {
            subset: subset.clone(),
            u_threshold: f64::INFINITY,
            warmup_samples: 8,
            train_iterations: 20,
        };
        let mut rng_plain = RngStream::new(208, 0);
        let plain =
            subset_simulation(identity_model(), &standard_normal(), &subset, &mut rng_plain)
                .unwrap();
        let mut rng_al = RngStream::new(208, 0);
        let al = active_learning_subset_simulation(
            identity_model(),
            &standard_normal(),
            &cfg,
            &mut rng_al,
        )
        .unwrap();
        assert_eq!(al.gp_calls, 0);
        assert_eq!(al.model_calls - al.warmup_calls, plain.model_calls);
        assert_eq!(al.failure_probability.to_bits(), plain.failure_probability.to_bits());
    }

    #[test]
    fn gp_filter_cuts_model_calls_on_linear_limit_state() {
        let truth = 3.167124183311986e-5; // Phi(-4)
        let subset = SubsetConfig {
            samples_per_subset: 1000,
            failure: FailureCriterion::Above(4.0),
            ..SubsetConfig::default()
        };
        let cfg = AlSubsetConfig {
            subset: subset.clone(),
            warmup_samples: 12,
            u_threshold: 2.0,
            train_iterations: 100,
        };
        let mut rng_plain = RngStream::new(209, 0);
        let plain =
            subset_simulation(identity_model(), &standard_normal(), &subset, &mut rng_plain)
                .unwrap();
        let mut rng_al = RngStream::new(209, 0);
        let al = active_learning_subset_simulation(
            identity_model(),
            &standard_normal(),
            &cfg,
            &mut rng_al,
        )
        .unwrap();
        assert!(al.converged);
        let ratio = al.failure_probability / truth;
        assert!((0.5..2.0).contains(&ratio), "estimate off by {ratio}");
        assert!(
            (al.model_calls as f64) < 0.10 * plain.model_calls as f64,
            "AL used {} of {} plain calls",
            al.model_calls,
            plain.model_calls
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = SubsetConfig::default();
        cfg.p0 = 0.0;
        assert!(cfg.validate().is_err());
        cfg.p0 = 1.5;
        assert!(cfg.validate().is_err());
        cfg = SubsetConfig::default();
        cfg.samples_per_subset = 1;
        assert!(cfg.validate().is_err());
        cfg = SubsetConfig::default();
        cfg.chains = Some(0);
        assert!(cfg.validate().is_err());
        let mut al = AlSubsetConfig::default();
        al.warmup_samples = 1;
        assert!(al.validate().is_err());
        al = AlSubsetConfig::default();
        al.u_threshold = -1.0;
        assert!(al.validate().is_err());
    }
}
