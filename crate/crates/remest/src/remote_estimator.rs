//! The remote MMSE estimator under the cumulative-innovation trigger.
//!
//! During silence the remote error covariance is the local filter's plus a
//! weighted sum of propagated innovation covariances; the weights are the
//! conditional second moments of the normalized innovations given every
//! "no transmission" region. When the silence thresholds are
//! non-increasing the regions nest and the weights collapse to a single
//! chi-square CDF ratio; otherwise they are estimated by rejection
//! sampling. A trace upper bound that needs only the CDF ratio is also
//! provided.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::etc_scheme::chi2::{chi2_cdf, ln_gamma};
use crate::lin_gauss::{psd_rank, symmetrize, LocalFilterState, SteadyState};

/// Ratio Pr(chi2_{tau n + 2} <= delta) / Pr(chi2_{tau n} <= delta).
///
/// Equals E[chi2_{tau n} | chi2_{tau n} <= delta] / (tau n), the
/// normalized mean of the truncated cumulative statistic; 0 when tau = 0.
pub fn beta_factor(tau: usize, delta: f64, dof: usize) -> Result<f64> {
    if tau == 0 {
        return Ok(0.0);
    }
    if dof == 0 {
        return Err(Error::validation("beta_factor: dof must be positive"));
    }
    if !(delta > 0.0) {
        return Err(Error::validation("beta_factor: delta must be positive"));
    }
    let k = tau * dof;
    let den = chi2_cdf(k, delta.min(1e300))?;
    if den == 0.0 {
        // Leading series term in log domain: ln P(a, z) ~ a ln z - z - ln G(a+1).
        let a = k as f64 / 2.0;
        let z = delta / 2.0;
        let log_num = (a + 1.0) * z.ln() - z - ln_gamma(a + 2.0);
        let log_den = a * z.ln() - z - ln_gamma(a + 1.0);
        return Err(Error::RatioUnderflow { log_value: log_num - log_den });
    }
    let num = chi2_cdf(k + 2, delta.min(1e300))?;
    Ok(num / den)
}

/// Conditional second-moment factors of the normalized innovations over a
/// silence window, one scalar per silence step (oldest first).
#[derive(Debug, Clone)]
pub struct SilenceMoments {
    pub factors: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub acceptance_rate: f64,
    /// True when the collapsed closed form applied (non-increasing
    /// thresholds); factors are then exact.
    pub exact: bool,
}

impl SilenceMoments {
    /// Sum of n * eta_i over the window.
    pub fn total(&self, dof: usize) -> f64 {
        self.factors.iter().sum::<f64>() * dof as f64
    }
}

fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] >= w[1])
}

/// Estimate the moment factors by rejection sampling against every
/// cumulative constraint.
pub(crate) fn rejection_moment_factors(
    thresholds: &[f64],
    dof: usize,
    samples: usize,
    seed: u64,
) -> Result<SilenceMoments> {
    let tau = thresholds.len();
    let chi = ChiSquared::new(dof as f64)
        .map_err(|e| Error::validation(format!("chi-square sampler: {e}")))?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut accepted = 0u64;
    let mut sums = vec![0.0f64; tau];
    let mut sq_sums = vec![0.0f64; tau];
    let mut draw = vec![0.0f64; tau];
    for _ in 0..samples {
        let mut cum = 0.0;
        let mut ok = true;
        for (l, d) in draw.iter_mut().enumerate() {
            *d = chi.sample(&mut rng);
            cum += *d;
            if cum > thresholds[l] {
                ok = false;
                break;
            }
        }
        if ok {
            accepted += 1;
            for l in 0..tau {
                sums[l] += draw[l];
                sq_sums[l] += draw[l] * draw[l];
            }
        }
    }
    let rate = accepted as f64 / samples as f64;
    if rate < 1e-6 {
        return Err(Error::AcceptanceTooLow { rate });
    }
    let na = accepted as f64;
    let mut factors = Vec::with_capacity(tau);
    let mut ses = Vec::with_capacity(tau);
    for l in 0..tau {
        let mean = sums[l] / na;
        let var = (sq_sums[l] / na - mean * mean).max(0.0);
        factors.push(mean / dof as f64);
        ses.push((var / na).sqrt() / dof as f64);
    }
    Ok(SilenceMoments { factors, standard_errors: ses, acceptance_rate: rate, exact: false })
}

/// Conditional moment factors for a silence window with thresholds
/// `delta_{t+1} .. delta_k` (oldest first) and per-step dof `dof`.
///
/// Non-increasing windows use the exact collapsed form, where every factor
/// equals `beta_factor(tau, delta_k)`; other windows are estimated with
/// `samples` rejection draws.
pub fn silence_moment_factors(
    thresholds: &[f64],
    dof: usize,
    samples: usize,
    seed: u64,
) -> Result<SilenceMoments> {
    if thresholds.is_empty() {
        return Err(Error::validation("silence window must be non-empty"));
    }
    if thresholds.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::validation("thresholds must be positive"));
    }
    if non_increasing(thresholds) {
        let tau = thresholds.len();
        let beta = beta_factor(tau, thresholds[tau - 1], dof)?;
        return Ok(SilenceMoments {
            factors: vec![beta; tau],
            standard_errors: vec![0.0; tau],
            acceptance_rate: 1.0,
            exact: true,
        });
    }
    rejection_moment_factors(thresholds, dof, samples, seed)
}

/// Sampling options for the general (non-monotone) estimator path.
#[derive(Debug, Clone, Copy)]
pub struct EtaOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for EtaOptions {
    fn default() -> Self {
        EtaOptions { samples: 200_000, seed: 0x0e7a }
    }
}

/// Remote estimator state: the MMSE mean, its error covariance, and the
/// bookkeeping of the current silence window.
#[derive(Debug, Clone)]
pub struct RemoteState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub tau_plus: usize,
    /// Thresholds applied over the current silence window, oldest first.
    pub thresholds: Vec<f64>,
    /// P_pred - P_post of the local filter per silence step, oldest first.
    pub delta_blocks: Vec<DMatrix<f64>>,
}

impl RemoteState {
    /// State right after a received transmission.
    pub fn from_transmission(x_hat: DVector<f64>, p_local: DMatrix<f64>) -> Self {
        RemoteState {
            x_hat,
            p: p_local,
            tau_plus: 0,
            thresholds: Vec::new(),
            delta_blocks: Vec::new(),
        }
    }
}

/// One step of the remote MMSE estimator.
///
/// On a transmission the remote adopts the local estimate. On silence the
/// mean propagates through A and the covariance adds the weighted,
/// propagated innovation covariances of the silence window; `delta_k` is
/// the threshold the trigger used at this step.
pub fn remote_update(
    prev: &RemoteState,
    gamma: bool,
    payload: Option<&DVector<f64>>,
    local: &LocalFilterState,
    delta_k: f64,
    a: &DMatrix<f64>,
    opts: &EtaOptions,
) -> Result<RemoteState> {
    if gamma != payload.is_some() {
        return Err(Error::PayloadMismatch);
    }
    if gamma {
        let payload = payload.unwrap();
        return Ok(RemoteState::from_transmission(payload.clone(), local.p_post.clone()));
    }
    if !(delta_k > 0.0) {
        return Err(Error::validation("delta_k must be positive"));
    }
    let mut thresholds = prev.thresholds.clone();
    thresholds.push(delta_k);
    let mut delta_blocks = prev.delta_blocks.clone();
    delta_blocks.push(symmetrize(&(&local.p_pred - &local.p_post)));
    let tau = thresholds.len();

    let dof = psd_rank(delta_blocks.last().unwrap());
    let moments = silence_moment_factors(&thresholds, dof, opts.samples, opts.seed)?;

    let n = a.nrows();
    let mut p = local.p_post.clone();
    let mut a_pow = DMatrix::identity(n, n); // A^i; i = 0 pairs with the newest block
    for i in 0..tau {
        let j = tau - 1 - i; // block index, oldest-first storage
        p += moments.factors[j] * (&a_pow * &delta_blocks[j] * a_pow.transpose());
        a_pow = a * a_pow;
    }
    Ok(RemoteState {
        x_hat: a * &prev.x_hat,
        p: symmetrize(&p),
        tau_plus: prev.tau_plus + 1,
        thresholds,
        delta_blocks,
    })
}

/// Steady-state silence covariance with non-increasing thresholds:
/// `P = P_bar + beta(tau_plus, delta_k) * sum_{i<tau_plus} A^i (P_hat - P_bar) A^i'`.
pub fn steady_silence_covariance(
    steady: &SteadyState,
    a: &DMatrix<f64>,
    tau_plus: usize,
    delta_k: f64,
    dof: usize,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut acc = DMatrix::zeros(n, n);
    let mut a_pow = DMatrix::identity(n, n);
    let diff = steady.innovation_cov();
    for _ in 0..tau_plus {
        acc += &a_pow * &diff * a_pow.transpose();
        a_pow = a * a_pow;
    }
    let beta = beta_factor(tau_plus, delta_k, dof)?;
    Ok(symmetrize(&(&steady.p_bar + beta * acc)))
}

/// Trace upper bound for the silence-state MSE:
/// `tr(P_k) <= tr(P_local_k) + tau * n * beta(tau, delta_k) * lambda_max`,
/// with lambda_max taken over the propagated innovation-covariance blocks.
///
/// `local_cov_pairs` holds (P_pred, P_post) for each silence step, oldest
/// first; the newest pair belongs to the current time.
pub fn mse_upper_bound(
    tau: usize,
    delta_k: f64,
    local_cov_pairs: &[(DMatrix<f64>, DMatrix<f64>)],
    a: &DMatrix<f64>,
) -> Result<f64> {
    if tau == 0 || local_cov_pairs.len() != tau {
        return Err(Error::validation("need one covariance pair per silence step"));
    }
    let n = a.nrows();
    let newest_diff = symmetrize(&(&local_cov_pairs[tau - 1].0 - &local_cov_pairs[tau - 1].1));
    let dof = psd_rank(&newest_diff);
    let mut lambda_max = 0.0f64;
    let mut a_pow = DMatrix::identity(n, n);
    for i in 0..tau {
        let (p_pred, p_post) = &local_cov_pairs[tau - 1 - i];
        let block = symmetrize(&(&a_pow * symmetrize(&(p_pred - p_post)) * a_pow.transpose()));
        let top = block.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l));
        lambda_max = lambda_max.max(top);
        a_pow = a * a_pow;
    }
    let beta = beta_factor(tau, delta_k, dof)?;
    let tr_local = local_cov_pairs[tau - 1].1.trace();
    Ok(tr_local + (tau * dof) as f64 * beta * lambda_max)
}

/// Result of the conditional-truncation inequality check
/// `E[sum ||Xi_i||^2 | d_1 .. d_N] <= E[sum ||Xi_i||^2 | d_N]`,
/// with equality iff every earlier threshold is >= the final one.
#[derive(Debug, Clone)]
pub struct TruncationInequality {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub holds: bool,
}

impl TruncationInequality {
    pub fn combined_se(&self) -> f64 {
        (self.lhs_se * self.lhs_se + self.rhs_se * self.rhs_se).sqrt()
    }
}

/// Estimate both conditional means from the same iid chi-square draws:
/// the all-constraints event (rejection under every cumulative bound) on
/// the left, the final-constraint event on the right. Sharing draws makes
/// the two sides exactly equal whenever the events coincide.
pub fn truncation_inequality_check(
    thresholds: &[f64],
    dof: usize,
    samples: usize,
    seed: u64,
) -> Result<TruncationInequality> {
    let n_blocks = thresholds.len();
    if n_blocks == 0 {
        return Err(Error::validation("need at least one threshold"));
    }
    if samples < 100_000 {
        return Err(Error::validation("truncation check needs samples >= 1e5"));
    }
    if thresholds.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::validation("thresholds must be positive"));
    }
    let chi = ChiSquared::new(dof as f64)
        .map_err(|e| Error::validation(format!("chi-square sampler: {e}")))?;
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut acc_all, mut sum_all, mut sq_all) = (0u64, 0.0f64, 0.0f64);
    let (mut acc_last, mut sum_last, mut sq_last) = (0u64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let mut cum = 0.0;
        let mut all_ok = true;
        for &d in thresholds {
            cum += chi.sample(&mut rng);
            if all_ok && cum > d {
                all_ok = false;
            }
        }
        if cum <= thresholds[n_blocks - 1] {
            acc_last += 1;
            sum_last += cum;
            sq_last += cum * cum;
            if all_ok {
                acc_all += 1;
                sum_all += cum;
                sq_all += cum * cum;
            }
        }
    }
    if acc_all == 0 || acc_last == 0 {
        return Err(Error::AcceptanceTooLow { rate: 0.0 });
    }
    let stats = |acc: u64, sum: f64, sq: f64| {
        let m = sum / acc as f64;
        let var = (sq / acc as f64 - m * m).max(0.0);
        (m, (var / acc as f64).sqrt())
    };
    let (lhs, lhs_se) = stats(acc_all, sum_all, sq_all);
    let (rhs, rhs_se) = stats(acc_last, sum_last, sq_last);
    let combined = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    Ok(TruncationInequality { lhs, lhs_se, rhs, rhs_se, holds: lhs <= rhs + 3.0 * combined })
}
