//! Serial and ensemble MCMC: random-walk Metropolis (single chain and P
//! independent chains per step), the affine-invariant stretch move, the
//! differential-evolution move, and the Gelman-Rubin convergence
//! diagnostic.
//!
//! Ensemble steps are functional: they take a state, issue one batched
//! target evaluation per half (stretch) or per generation (MH, DE), and
//! return the successor state. All randomness is drawn from the caller's
//! stream in walker order before and after the batch, never inside it,
//! so results cannot depend on evaluation completion order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;

use crate::error::Error;
use crate::numerics::RngStream;

/// Positions and log-posteriors of P parallel chains.
///
/// Proposals with a log-posterior of negative infinity are rejected
/// naturally; non-finite values at construction are contract violations.
#[derive(Clone, Debug)]
pub struct EnsembleState {
    /// P x dim walker positions.
    pub positions: DMatrix<f64>,
    pub log_posteriors: DVector<f64>,
    pub iteration: usize,
    pub acceptance_counts: Vec<usize>,
}

impl EnsembleState {
    pub fn new(
        positions: DMatrix<f64>,
        mut log_posterior_batch: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    ) -> Result<Self, Error> {
        if positions.nrows() == 0 || positions.ncols() == 0 {
            return Err(Error::EmptyData("ensemble positions".into()));
        }
        let lp = log_posterior_batch(&positions)?;
        if lp.len() != positions.nrows() {
            return Err(Error::ModelEvaluation("batch log-posterior length mismatch".into()));
        }
        if lp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTarget);
        }
        let p = positions.nrows();
        Ok(Self {
            positions,
            log_posteriors: lp,
            iteration: 0,
            acceptance_counts: vec![0; p],
        })
    }

    pub fn walkers(&self) -> usize {
        self.positions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// Accepted transitions over all proposal opportunities so far.
    pub fn pooled_acceptance_rate(&self) -> f64 {
        if self.iteration == 0 {
            return 0.0;
        }
        let total: usize = self.acceptance_counts.iter().sum();
        total as f64 / (self.iteration * self.walkers()) as f64
    }

    fn is_degenerate(&self) -> bool {
        let first = self.positions.row(0);
        (1..self.walkers()).all(|i| self.positions.row(i) == first)
    }
}

#[derive(Clone, Debug)]
pub struct MhChainResult {
    /// One row per step, the state after that step's accept/reject.
    pub chain: DMatrix<f64>,
    pub log_posteriors: DVector<f64>,
    pub accepted: usize,
    pub acceptance_rate: f64,
}

/// Serial random-walk Metropolis returning the full chain.
pub fn mh_chain(
    mut log_posterior: impl FnMut(&[f64]) -> Result<f64, Error>,
    init: &[f64],
    proposal_scales: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<MhChainResult, Error> {
    let dim = init.len();
    if dim == 0 {
        return Err(Error::EmptyData("initial state".into()));
    }
    if proposal_scales.len() != dim {
        return Err(Error::DimensionMismatch("proposal scales vs state dimension".into()));
    }
    if proposal_scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::NonPositiveParameter("proposal scale".into()));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("chain length must be positive".into()));
    }
    let mut current: Vec<f64> = init.to_vec();
    let mut lp_current = log_posterior(&current)?;
    if !lp_current.is_finite() {
        return Err(Error::NonFiniteTarget);
    }
    let normal = rand_distr::StandardNormal;
    let mut chain = DMatrix::zeros(n, dim);
    let mut lps = DVector::zeros(n);
    let mut accepted = 0usize;
    let mut proposal = vec![0.0; dim];
    for t in 0..n {
        for j in 0..dim {
            let step: f64 = normal.sample(rng);
            proposal[j] = current[j] + proposal_scales[j] * step;
        }
        let lp_prop = log_posterior(&proposal)?;
        if lp_prop.is_nan() || lp_prop == f64::INFINITY {
            return Err(Error::ModelEvaluation("non-finite log-posterior at proposal".into()));
        }
        let u: f64 = rng.random();
        if u.ln() < lp_prop - lp_current {
            current.copy_from_slice(&proposal);
            lp_current = lp_prop;
            accepted += 1;
        }
        for j in 0..dim {
            chain[(t, j)] = current[j];
        }
        lps[t] = lp_current;
    }
    Ok(MhChainResult {
        chain,
        log_posteriors: lps,
        accepted,
        acceptance_rate: accepted as f64 / n as f64,
    })
}

fn check_batch(lp: &DVector<f64>, expected: usize) -> Result<(), Error> {
    if lp.len() != expected {
        return Err(Error::ModelEvaluation("batch log-posterior length mismatch".into()));
    }
    if lp.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::ModelEvaluation("non-finite log-posterior at proposal".into()));
    }
    Ok(())
}

/// One step of P independent random-walk Metropolis chains, all proposals
/// evaluated as a single batch.
pub fn parallel_mh_step(
    state: &EnsembleState,
    mut log_posterior_batch: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    proposal_scales: &[f64],
    rng: &mut RngStream,
) -> Result<EnsembleState, Error> {
    let (p, dim) = (state.walkers(), state.dim());
    if proposal_scales.len() != dim {
        return Err(Error::DimensionMismatch("proposal scales vs state dimension".into()));
    }
    if proposal_scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::NonPositiveParameter("proposal scale".into()));
    }
    let normal = rand_distr::StandardNormal;
    let mut proposals = DMatrix::zeros(p, dim);
    for i in 0..p {
        for j in 0..dim {
            let step: f64 = normal.sample(rng);
            proposals[(i, j)] = state.positions[(i, j)] + proposal_scales[j] * step;
        }
    }
    let lp = log_posterior_batch(&proposals)?;
    check_batch(&lp, p)?;
    let mut next = state.clone();
    next.iteration += 1;
    for i in 0..p {
        let u: f64 = rng.random();
        if u.ln() < lp[i] - state.log_posteriors[i] {
            for j in 0..dim {
                next.positions[(i, j)] = proposals[(i, j)];
            }
            next.log_posteriors[i] = lp[i];
            next.acceptance_counts[i] += 1;
        }
    }
    Ok(next)
}

/// Draws from the stretch density g(z) proportional to 1/sqrt(z) on
/// [1/a, a].
fn stretch_z(a: f64, rng: &mut RngStream) -> f64 {
    let u: f64 = rng.random();
    let t = 1.0 + u * (a - 1.0);
    t * t / a
}

/// Spreads a collapsed ensemble so the stretch move can act again.
fn rejitter(
    state: &EnsembleState,
    log_posterior_batch: &mut impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    rng: &mut RngStream,
) -> Result<EnsembleState, Error> {
    log::warn!("ensemble walkers are all identical; re-jittering");
    let normal = rand_distr::StandardNormal;
    let mut positions = state.positions.clone();
    for i in 0..positions.nrows() {
        for j in 0..positions.ncols() {
            let step: f64 = normal.sample(rng);
            positions[(i, j)] += 1e-6 * positions[(i, j)].abs().max(1.0) * step;
        }
    }
    let lp = log_posterior_batch(&positions)?;
    check_batch(&lp, positions.nrows())?;
    let mut next = state.clone();
    next.positions = positions;
    next.log_posteriors = lp;
    Ok(next)
}

/// One affine-invariant stretch-move step.
///
/// Walkers update in two halves so each half's proposals form one batch
/// against the other (already updated) half: walker i pairs with partner
/// x_j, proposes y = x_j + Z (x_i - x_j) with Z from the stretch density,
/// and accepts with probability min(1, Z^(dim-1) p(y)/p(x_i)). At a = 1,
/// Z is identically 1 and proposals coincide with the walkers' current
/// positions, so the ensemble cannot move (documented degenerate limit).
pub fn stretch_move_step(
    state: &EnsembleState,
    mut log_posterior_batch: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    stretch_a: f64,
    rng: &mut RngStream,
) -> Result<EnsembleState, Error> {
    let (p, dim) = (state.walkers(), state.dim());
    if p < 2 {
        return Err(Error::InsufficientChains { needed: 2, got: p });
    }
    if !(stretch_a >= 1.0) {
        return Err(Error::InvalidConfig("stretch parameter must be >= 1".into()));
    }
    let mut next = if state.is_degenerate() {
        rejitter(state, &mut log_posterior_batch, rng)?
    } else {
        state.clone()
    };
    next.iteration += 1;
    let split = p / 2;
    let halves: [(usize, usize); 2] = [(0, split), (split, p)];
    for (start, end) in halves {
        let count = end - start;
        let other = p - count;
        let mut partners = Vec::with_capacity(count);
        let mut zs = Vec::with_capacity(count);
        let mut proposals = DMatrix::zeros(count, dim);
        for (k, i) in (start..end).enumerate() {
            let pick = rng.random_range(0..other);
            // The complementary set is every walker outside [start, end).
            let j = if pick < start { pick } else { pick + count };
            let z = stretch_z(stretch_a, rng);
            for c in 0..dim {
                proposals[(k, c)] =
                    next.positions[(j, c)] + z * (next.positions[(i, c)] - next.positions[(j, c)]);
            }
            partners.push(j);
            zs.push(z);
        }
        let lp = log_posterior_batch(&proposals)?;
        check_batch(&lp, count)?;
        for (k, i) in (start..end).enumerate() {
            let ln_accept = (dim as f64 - 1.0) * zs[k].ln() + lp[k] - next.log_posteriors[i];
            let u: f64 = rng.random();
            if u.ln() < ln_accept {
                for c in 0..dim {
                    next.positions[(i, c)] = proposals[(k, c)];
                }
                next.log_posteriors[i] = lp[k];
                next.acceptance_counts[i] += 1;
            }
        }
    }
    Ok(next)
}

/// One differential-evolution step: chain i proposes
/// x_i + gamma (x_r1 - x_r2) + e with r1 != r2 != i drawn from the
/// previous generation and e uniform in [-jitter_b, jitter_b] per
/// component. `gamma` defaults to 2.38 / sqrt(2 dim).
pub fn differential_evolution_step(
    state: &EnsembleState,
    mut log_posterior_batch: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>, Error>,
    gamma: Option<f64>,
    jitter_b: f64,
    rng: &mut RngStream,
) -> Result<EnsembleState, Error> {
    let (p, dim) = (state.walkers(), state.dim());
    if p < 3 {
        return Err(Error::InsufficientChains { needed: 3, got: p });
    }
    if !(jitter_b >= 0.0) {
        return Err(Error::InvalidConfig("jitter bound must be non-negative".into()));
    }
    let gamma = gamma.unwrap_or(2.38 / (2.0 * dim as f64).sqrt());
    if !gamma.is_finite() {
        return Err(Error::InvalidConfig("gamma must be finite".into()));
    }
    let mut proposals = DMatrix::zeros(p, dim);
    for i in 0..p {
        let r1_raw = rng.random_range(0..p - 1);
        let r1 = r1_raw + usize::from(r1_raw >= i);
        let r2_raw = rng.random_range(0..p - 2);
        let lo = i.min(r1);
        let hi = i.max(r1);
        let mut r2 = r2_raw + usize::from(r2_raw >= lo);
        r2 += usize::from(r2 >= hi);
        for j in 0..dim {
            let e = if jitter_b > 0.0 { rng.random_range(-jitter_b..jitter_b) } else { 0.0 };
            proposals[(i, j)] = state.positions[(i, j)]
                + gamma * (state.positions[(r1, j)] - state.positions[(r2, j)])
                + e;
        }
    }
    let lp = log_posterior_batch(&proposals)?;
    check_batch(&lp, p)?;
    let mut next = state.clone();
    next.iteration += 1;
    for i in 0..p {
        let u: f64 = rng.random();
        if u.ln() < lp[i] - state.log_posteriors[i] {
            for j in 0..dim {
                next.positions[(i, j)] = proposals[(i, j)];
            }
            next.log_posteriors[i] = lp[i];
            next.acceptance_counts[i] += 1;
        }
    }
    Ok(next)
}

/// Per-parameter Gelman-Rubin potential scale reduction factor over
/// equal-length chains (each n x dim).
///
/// R = sqrt(((n-1)/n W + B/n) / W). Identical constant chains give R = 1;
/// distinct constant chains give +inf (zero within-variance).
pub fn gelman_rubin(chains: &[DMatrix<f64>]) -> Result<DVector<f64>, Error> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InsufficientChains { needed: 2, got: m });
    }
    let n = chains[0].nrows();
    let dim = chains[0].ncols();
    if n < 4 {
        return Err(Error::InvalidConfig("chains must have length >= 4".into()));
    }
    if chains.iter().any(|c| c.nrows() != n || c.ncols() != dim) {
        return Err(Error::DimensionMismatch("chains must share shape".into()));
    }
    let mut r_hat = DVector::zeros(dim);
    for j in 0..dim {
        let means: Vec<f64> =
            chains.iter().map(|c| c.column(j).iter().sum::<f64>() / n as f64).collect();
        let grand = means.iter().sum::<f64>() / m as f64;
        let b = n as f64 / (m as f64 - 1.0)
            * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
        let w = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| {
                c.column(j).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n as f64 - 1.0)
            })
            .sum::<f64>()
            / m as f64;
        r_hat[j] = if w > 0.0 {
            (((n as f64 - 1.0) / n as f64 * w + b / n as f64) / w).sqrt()
        } else if b > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
    }
    Ok(r_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn standard_normal_lp(x: &[f64]) -> Result<f64, Error> {
        Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>())
    }

    fn standard_normal_batch(xs: &DMatrix<f64>) -> Result<DVector<f64>, Error> {
        Ok(DVector::from_fn(xs.nrows(), |i, _| {
            -0.5 * (0..xs.ncols()).map(|j| xs[(i, j)] * xs[(i, j)]).sum::<f64>()
        }))
    }

    /// Batch-means Monte Carlo standard error of the mean of `xs`.
    fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
        let len = xs.len() / batches * batches;
        let bsize = len / batches;
        let means: Vec<f64> = (0..batches)
            .map(|b| xs[b * bsize..(b + 1) * bsize].iter().sum::<f64>() / bsize as f64)
            .collect();
        let grand = means.iter().sum::<f64>() / batches as f64;
        let var =
            means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (batches as f64 - 1.0);
        (var / batches as f64).sqrt()
    }

    #[test]
    fn flat_target_accepts_every_proposal() {
        let mut rng = RngStream::new(300, 0);
        let res = mh_chain(|_| Ok(0.0), &[0.0, 0.0], &[1.0, 1.0], 200, &mut rng).unwrap();
        assert_eq!(res.accepted, 200);
        assert_eq!(res.acceptance_rate, 1.0);
        // Free random walk: consecutive states always differ.
        for t in 1..200 {
            assert_ne!(res.chain.row(t), res.chain.row(t - 1));
        }
    }

    #[test]
    fn serial_chain_recovers_standard_normal_mean() {
        let mut rng = RngStream::new(301, 0);
        let res = mh_chain(standard_normal_lp, &[0.0], &[2.4], 50_000, &mut rng).unwrap();
        let xs: Vec<f64> = res.chain.column(0).iter().cloned().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let se = batch_means_se(&xs, 100);
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
        assert!(res.acceptance_rate > 0.2 && res.acceptance_rate < 0.8);
    }

    #[test]
    fn serial_chain_seed_reproducibility() {
        let run = |seed| {
            let mut rng = RngStream::new(302, seed);
            mh_chain(standard_normal_lp, &[1.0], &[1.0], 500, &mut rng).unwrap()
        };
        let a = run(0);
        let b = run(0);
        let c = run(1);
        assert_eq!(a.chain, b.chain);
        assert_eq!(a.accepted, b.accepted);
        assert_ne!(a.chain, c.chain);
    }

    #[test]
    fn non_finite_initial_target_rejected() {
        let mut rng = RngStream::new(303, 0);
        let err = mh_chain(|_| Ok(f64::NAN), &[0.0], &[1.0], 10, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteTarget));
        let err = EnsembleState::new(DMatrix::zeros(3, 2), |xs| {
            Ok(DVector::from_element(xs.nrows(), f64::NEG_INFINITY))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteTarget));
    }

    #[test]
    fn rising_target_accepts_all_parallel_proposals() {
        // Each batch reports a higher log-posterior than the last, so every
        // proposal is an improvement and must be accepted.
        let mut calls = 0.0;
        let rising = |xs: &DMatrix<f64>| {
            calls += 1.0;
            Ok(DVector::from_element(xs.nrows(), calls))
        };
        let mut rng = RngStream::new(304, 0);
        let state = EnsembleState::new(DMatrix::zeros(5, 2), rising).unwrap();
        let mut calls2 = 1.0;
        let rising2 = |xs: &DMatrix<f64>| {
            calls2 += 1.0;
            Ok(DVector::from_element(xs.nrows(), calls2))
        };
        let next = parallel_mh_step(&state, rising2, &[1.0, 1.0], &mut rng).unwrap();
        assert!(next.acceptance_counts.iter().all(|c| *c == 1));
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn parallel_chains_pool_to_standard_normal_mean() {
        let mut rng = RngStream::new(305, 0);
        let p = 10;
        let init = DMatrix::from_fn(p, 1, |i, _| i as f64 / p as f64 - 0.5);
        let mut state = EnsembleState::new(init, standard_normal_batch).unwrap();
        let steps = 5000;
        let burn = 500;
        let mut sums = vec![0.0; p];
        for t in 0..steps {
            state = parallel_mh_step(&state, standard_normal_batch, &[2.4], &mut rng).unwrap();
            if t >= burn {
                for i in 0..p {
                    sums[i] += state.positions[(i, 0)];
                }
            }
        }
        let kept = (steps - burn) as f64;
        let chain_means: Vec<f64> = sums.iter().map(|s| s / kept).collect();
        let pooled = chain_means.iter().sum::<f64>() / p as f64;
        let var = chain_means.iter().map(|m| (m - pooled) * (m - pooled)).sum::<f64>()
            / (p as f64 - 1.0);
        let se = (var / p as f64).sqrt();
        assert!(pooled.abs() < 3.0 * se, "pooled {pooled} se {se}");
        let rate = state.pooled_acceptance_rate();
        assert!(rate > 0.0 && rate < 1.0);
    }

    #[test]
    fn single_chain_parallel_step_runs() {
        let mut rng = RngStream::new(306, 0);
        let state = EnsembleState::new(DMatrix::zeros(1, 1), standard_normal_batch).unwrap();
        let next = parallel_mh_step(&state, standard_normal_batch, &[1.0], &mut rng).unwrap();
        assert_eq!(next.walkers(), 1);
    }

    #[test]
    fn stretch_move_requires_two_walkers_and_de_three() {
        let mut rng = RngStream::new(307, 0);
        let one = EnsembleState::new(DMatrix::zeros(1, 1), standard_normal_batch).unwrap();
        assert!(matches!(
            stretch_move_step(&one, standard_normal_batch, 2.0, &mut rng).unwrap_err(),
            Error::InsufficientChains { needed: 2, got: 1 }
        ));
        let two = EnsembleState::new(
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            standard_normal_batch,
        )
        .unwrap();
        assert!(matches!(
            differential_evolution_step(&two, standard_normal_batch, None, 0.0, &mut rng)
                .unwrap_err(),
            Error::InsufficientChains { needed: 3, got: 2 }
        ));
    }

    #[test]
    fn stretch_unit_a_cannot_move() {
        let mut rng = RngStream::new(308, 0);
        let init = DMatrix::from_row_slice(4, 2, &[0.5, -1.0, 1.25, 0.75, -0.5, 2.0, 1.0, 1.0]);
        let state = EnsembleState::new(init.clone(), standard_normal_batch).unwrap();
        let next = stretch_move_step(&state, standard_normal_batch, 1.0, &mut rng).unwrap();
        assert_eq!(next.positions, init);
    }

    #[test]
    fn degenerate_ensemble_is_rejittered() {
        let mut rng = RngStream::new(309, 0);
        let init = DMatrix::from_element(4, 2, 1.0);
        let state = EnsembleState::new(init, standard_normal_batch).unwrap();
        let next = stretch_move_step(&state, standard_normal_batch, 2.0, &mut rng).unwrap();
        assert!(!next.is_degenerate());
    }

    #[test]
    fn stretch_move_is_affine_equivariant_bitwise() {
        // Diagonal map with power-of-two entries: every arithmetic step of
        // the move commutes exactly with the scaling, so paired runs with
        // the same seed must agree to the bit.
        let scale = [2.0, 0.5];
        let init_a =
            DMatrix::from_row_slice(6, 2, &[0.5, -1.0, 1.25, 0.75, -0.5, 2.0, 1.0, 1.0, -1.5,
                0.25, 2.0, -0.75]);
        let init_b = DMatrix::from_fn(6, 2, |i, j| init_a[(i, j)] * scale[j]);
        let lp_a = standard_normal_batch;
        let lp_b = |ys: &DMatrix<f64>| {
            let xs = DMatrix::from_fn(ys.nrows(), 2, |i, j| ys[(i, j)] / scale[j]);
            standard_normal_batch(&xs)
        };
        let mut rng_a = RngStream::new(310, 0);
        let mut rng_b = RngStream::new(310, 0);
        let mut state_a = EnsembleState::new(init_a, lp_a).unwrap();
        let mut state_b = EnsembleState::new(init_b, lp_b).unwrap();
        for _ in 0..50 {
            state_a = stretch_move_step(&state_a, lp_a, 2.0, &mut rng_a).unwrap();
            state_b = stretch_move_step(&state_b, lp_b, 2.0, &mut rng_b).unwrap();
        }
        for i in 0..6 {
            for j in 0..2 {
                let mapped = state_a.positions[(i, j)] * scale[j];
                assert_eq!(mapped.to_bits(), state_b.positions[(i, j)].to_bits());
            }
            assert_eq!(
                state_a.log_posteriors[i].to_bits(),
                state_b.log_posteriors[i].to_bits()
            );
        }
        assert_eq!(state_a.acceptance_counts, state_b.acceptance_counts);
    }

    #[test]
    fn stretch_recovers_correlated_gaussian_covariance() {
        // Target: zero-mean Gaussian with unit variances and 0.8 correlation.
        let rho: f64 = 0.8;
        let det = 1.0 - rho * rho;
        let lp = |xs: &DMatrix<f64>| {
            Ok(DVector::from_fn(xs.nrows(), |i, _| {
                let (x, y) = (xs[(i, 0)], xs[(i, 1)]);
                -0.5 * (x * x - 2.0 * rho * x * y + y * y) / det
            }))
        };
        let p = 32;
        let mut rng = RngStream::new(311, 0);
        let init = DMatrix::from_fn(p, 2, |i, j| ((i * 2 + j) as f64 * 0.37).sin());
        let mut state = EnsembleState::new(init, lp).unwrap();
        let steps = 10_000;
        let burn = 2000;
        let mut acc = [0.0; 3];
        let mut count = 0.0;
        for t in 0..steps {
            state = stretch_move_step(&state, lp, 2.0, &mut rng).unwrap();
            if t >= burn {
                for i in 0..p {
                    let (x, y) = (state.positions[(i, 0)], state.positions[(i, 1)]);
                    acc[0] += x * x;
                    acc[1] += x * y;
                    acc[2] += y * y;
                }
                count += p as f64;
            }
        }
        let (cxx, cxy, cyy) = (acc[0] / count, acc[1] / count, acc[2] / count);
        let frob_err = ((cxx - 1.0).powi(2) + 2.0 * (cxy - rho).powi(2) + (cyy - 1.0).powi(2))
            .sqrt();
        let frob_truth = (2.0 + 2.0 * rho * rho).sqrt();
        assert!(frob_err / frob_truth < 0.10, "relative error {}", frob_err / frob_truth);
        let rate = state.pooled_acceptance_rate();
        assert!(rate > 0.1 && rate < 0.9, "acceptance {rate}");
    }

    #[test]
    fn de_zero_gamma_zero_jitter_is_stationary_bitwise() {
        let mut rng = RngStream::new(312, 0);
        let init = DMatrix::from_row_slice(4, 2, &[0.5, -1.0, 1.25, 0.75, -0.5, 2.0, 1.0, 1.0]);
        let state = EnsembleState::new(init.clone(), standard_normal_batch).unwrap();
        let next = differential_evolution_step(
            &state,
            standard_normal_batch,
            Some(0.0),
            0.0,
            &mut rng,
        )
        .unwrap();
        for i in 0..4 {
            for j in 0..2 {
                assert_eq!(next.positions[(i, j)].to_bits(), init[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn de_matches_long_serial_reference_on_banana_target() {
        // Rosenbrock density: p(x, y) proportional to
        // exp(-(1 - x)^2 - 100 (y - x^2)^2).
        let banana = |x: f64, y: f64| -> f64 {
            let a = 1.0 - x;
            let b = y - x * x;
            -(a * a) - 100.0 * b * b
        };
        // Long serial reference run.
        let mut ref_rng = RngStream::new(313, 0);
        let reference = mh_chain(
            |x| Ok(banana(x[0], x[1])),
            &[1.0, 1.0],
            &[0.25, 0.25],
            300_000,
            &mut ref_rng,
        )
        .unwrap();
        let burn_ref = 50_000;
        let ref_x: Vec<f64> =
            reference.chain.column(0).iter().skip(burn_ref).cloned().collect();
        let ref_y: Vec<f64> =
            reference.chain.column(1).iter().skip(burn_ref).cloned().collect();
        let ref_mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx_ref, my_ref) = (ref_mean(&ref_x), ref_mean(&ref_y));
        let se_ref = (batch_means_se(&ref_x, 100), batch_means_se(&ref_y, 100));

        let lp = |xs: &DMatrix<f64>| {
            Ok(DVector::from_fn(xs.nrows(), |i, _| banana(xs[(i, 0)], xs[(i, 1)])))
        };
        let p = 50;
        let mut rng = RngStream::new(313, 1);
        let normal = rand_distr::StandardNormal;
        let init = DMatrix::from_fn(p, 2, |_, j| {
            let z: f64 = normal.sample(&mut rng);
            if j == 0 { 1.0 + 0.3 * z } else { 1.0 + 0.3 * z }
        });
        let mut state = EnsembleState::new(init, lp).unwrap();
        let steps = 4000;
        let burn = 2000;
        let mut chain_sums = vec![[0.0; 2]; p];
        for t in 0..steps {
            state = differential_evolution_step(&state, lp, None, 1e-6, &mut rng).unwrap();
            if t >= burn {
                for i in 0..p {
                    chain_sums[i][0] += state.positions[(i, 0)];
                    chain_sums[i][1] += state.positions[(i, 1)];
                }
            }
        }
        let kept = (steps - burn) as f64;
        let de_chain_means: Vec<[f64; 2]> =
            chain_sums.iter().map(|s| [s[0] / kept, s[1] / kept]).collect();
        let de_mx = de_chain_means.iter().map(|m| m[0]).sum::<f64>() / p as f64;
        let de_my = de_chain_means.iter().map(|m| m[1]).sum::<f64>() / p as f64;
        let chain_se = |k: usize| {
            let mean = de_chain_means.iter().map(|m| m[k]).sum::<f64>() / p as f64;
            let var = de_chain_means.iter().map(|m| (m[k] - mean) * (m[k] - mean)).sum::<f64>()
                / (p as f64 - 1.0);
            (var / p as f64).sqrt()
        };
        let tol_x = 3.0 * (se_ref.0.powi(2) + chain_se(0).powi(2)).sqrt();
        let tol_y = 3.0 * (se_ref.1.powi(2) + chain_se(1).powi(2)).sqrt();
        assert!((de_mx - mx_ref).abs() < tol_x, "x: {de_mx} vs {mx_ref} tol {tol_x}");
        assert!((de_my - my_ref).abs() < tol_y, "y: {de_my} vs {my_ref} tol {tol_y}");
    }

    #[test]
    fn de_seed_reproducibility() {
        let run = |seed| {
            let mut rng = RngStream::new(314, seed);
            let init = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.0]);
            let mut state = EnsembleState::new(init, standard_normal_batch).unwrap();
            for _ in 0..100 {
                state =
                    differential_evolution_step(&state, standard_normal_batch, None, 1e-6, &mut rng)
                        .unwrap();
            }
            state
        };
        let a = run(0);
        let b = run(0);
        let c = run(1);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.acceptance_counts, b.acceptance_counts);
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn gelman_rubin_duplicate_chains_near_one() {
        let mut rng = RngStream::new(315, 0);
        let normal = rand_distr::StandardNormal;
        let n = 100;
        let chain = DMatrix::from_fn(n, 1, |_, _| {
            let z: f64 = normal.sample(&mut rng);
            z
        });
        let r = gelman_rubin(&[chain.clone(), chain.clone()]).unwrap();
        // Identical chains: B = 0, so R = sqrt((n-1)/n), just under 1.
        assert_relative_eq!(r[0], ((n as f64 - 1.0) / n as f64).sqrt(), max_relative = 1e-12);
        assert!((r[0] - 1.0).abs() <= 1.0 / n as f64);
    }

    #[test]
    fn gelman_rubin_same_target_chains_converge() {
        let chains: Vec<DMatrix<f64>> = (0..4)
            .map(|s| {
                let mut rng = RngStream::new(316, s);
                mh_chain(standard_normal_lp, &[s as f64 - 1.5], &[2.4], 10_000, &mut rng)
                    .unwrap()
                    .chain
            })
            .collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!(r[0] < 1.05, "R {}", r[0]);
    }

    #[test]
    fn gelman_rubin_disjoint_chains_flag_divergence() {
        let mut rng = RngStream::new(317, 0);
        let normal = rand_distr::StandardNormal;
        let mut make = |center: f64| {
            DMatrix::from_fn(500, 1, |_, _| {
                let z: f64 = normal.sample(&mut rng);
                center + z
            })
        };
        let r = gelman_rubin(&[make(-10.0), make(10.0)]).unwrap();
        assert!(r[0] > 1.2, "R {}", r[0]);
        // Distinct constant chains: zero within-variance, infinite R.
        let flat_a = DMatrix::from_element(10, 1, -1.0);
        let flat_b = DMatrix::from_element(10, 1, 1.0);
        let r = gelman_rubin(&[flat_a.clone(), flat_b]).unwrap();
        assert!(r[0].is_infinite());
        let r = gelman_rubin(&[flat_a.clone(), flat_a]).unwrap();
        assert_eq!(r[0], 1.0);
    }

    #[test]
    fn gelman_rubin_input_validation() {
        let c = DMatrix::zeros(10, 1);
        assert!(matches!(
            gelman_rubin(&[c.clone()]).unwrap_err(),
            Error::InsufficientChains { needed: 2, got: 1 }
        ));
        assert!(gelman_rubin(&[DMatrix::zeros(3, 1), DMatrix::zeros(3, 1)]).is_err());
        assert!(gelman_rubin(&[c.clone(), DMatrix::zeros(9, 1)]).is_err());
    }
}
