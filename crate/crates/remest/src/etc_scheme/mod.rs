//! The event-triggered communication scheme: innovation whitening, the
//! cumulative-innovation trigger, threshold schedules, chi-square
//! machinery, and the scheme's unconditional transmission probability.

pub mod chi2;
mod transmission;

pub use chi2::{chi2_cdf, chi2_pdf};
pub use transmission::{transmission_probability, AlphaEstimate, AlphaMethod};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lin_gauss::{symmetrize, RANK_CUTOFF};

/// Whitening map for the estimate innovation, built from the
/// eigendecomposition of `P_pred - P_post`.
///
/// `f` maps an innovation into a q-vector with identity covariance;
/// `f_pinv` maps back into the innovation's range space.
#[derive(Debug, Clone)]
pub struct InnovationNormalizer {
    f: DMatrix<f64>,
    f_pinv: DMatrix<f64>,
    eigvals: Vec<f64>,
    basis: DMatrix<f64>,
    q: usize,
}

impl InnovationNormalizer {
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn f_pinv(&self) -> &DMatrix<f64> {
        &self.f_pinv
    }
    /// Retained (positive) eigenvalues, descending.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }
    /// Full orthogonal eigenvector basis, columns ordered by descending
    /// eigenvalue.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    /// Effective rank q of the covariance difference.
    pub fn q(&self) -> usize {
        self.q
    }
}

/// Build the whitening map from the prior/posterior covariance pair.
///
/// Eigenvalues below `1e-10 * lambda_max` are treated as zero (rank
/// cutoff); eigenvector signs are fixed by making each vector's
/// largest-magnitude entry positive, so the map is reproducible.
pub fn build_normalizer(p_pred: &DMatrix<f64>, p_post: &DMatrix<f64>) -> Result<InnovationNormalizer> {
    let n = p_pred.nrows();
    if p_pred.shape() != (n, n) || p_post.shape() != (n, n) {
        return Err(Error::validation("covariances must be square and same size"));
    }
    let diff = symmetrize(&(p_pred - p_post));
    let eig = diff.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let min_eig = eig.eigenvalues[order[n - 1]];
    if min_eig < -RANK_CUTOFF * lambda_max.max(1e-300) {
        return Err(Error::IndefiniteDifference { min_eig });
    }

    let mut basis = DMatrix::zeros(n, n);
    let mut eigvals = Vec::new();
    for (col, &idx) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        // Sign convention: largest-magnitude entry positive.
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v = -v;
        }
        basis.set_column(col, &v);
        let lambda = eig.eigenvalues[idx];
        if lambda > RANK_CUTOFF * lambda_max {
            eigvals.push(lambda);
        }
    }
    let q = eigvals.len();
    if q == 0 {
        return Err(Error::validation("covariance difference is numerically zero"));
    }

    let mut f = DMatrix::zeros(q, n);
    let mut f_pinv = DMatrix::zeros(n, q);
    for (row, &lambda) in eigvals.iter().enumerate() {
        let u = basis.column(row);
        let s = lambda.sqrt();
        for i in 0..n {
            f[(row, i)] = u[i] / s;
            f_pinv[(i, row)] = u[i] * s;
        }
    }
    debug_assert!({
        let check = &f * &diff * f.transpose();
        let mut ok = true;
        for i in 0..q {
            for j in 0..q {
                let want = if i == j { 1.0 } else { 0.0 };
                ok &= (check[(i, j)] - want).abs() < 1e-8;
            }
        }
        ok
    });
    Ok(InnovationNormalizer { f, f_pinv, eigvals, basis, q })
}

/// Whiten an innovation: eps = F z. When z is the filter innovation, eps
/// is unconditionally standard normal in q dimensions.
pub fn normalize(z: &DVector<f64>, norm: &InnovationNormalizer) -> DVector<f64> {
    norm.f() * z
}

/// Transmission bookkeeping: decision bit, elapsed times, and the
/// cumulative innovation statistic accumulated since the last transmission.
#[derive(Debug, Clone)]
pub struct LinkState {
    /// Decision at the current time.
    pub gamma_last: bool,
    /// Time of the latest transmission at or before the current time.
    pub t_last: usize,
    /// Elapsed time since the latest transmission strictly before now.
    pub tau: usize,
    /// Elapsed time including the current decision (0 right after a
    /// transmission).
    pub tau_plus: usize,
    /// Sum of squared normalized innovations since the last transmission.
    pub cum_stat: f64,
    /// The normalized innovations accumulated since the last transmission.
    pub eps_history: Vec<DVector<f64>>,
    /// Current time index.
    pub time: usize,
}

impl LinkState {
    /// State at time 0 under the convention that a transmission occurs at
    /// time 0.
    pub fn initial() -> Self {
        LinkState {
            gamma_last: true,
            t_last: 0,
            tau: 0,
            tau_plus: 0,
            cum_stat: 0.0,
            eps_history: Vec::new(),
            time: 0,
        }
    }
}

/// Apply the trigger rule at the next time step.
///
/// The statistic becomes `cum_stat + ||eps||^2`; the sensor transmits iff
/// it exceeds `delta`. On transmission the accumulator resets; on silence
/// the innovation is appended to the history.
pub fn trigger(link: LinkState, eps: &DVector<f64>, delta: f64) -> (bool, LinkState) {
    debug_assert!(delta > 0.0, "trigger threshold must be positive");
    let k = link.time + 1;
    let cum = link.cum_stat + eps.norm_squared();
    if cum > delta {
        (
            true,
            LinkState {
                gamma_last: true,
                t_last: k,
                tau: k - link.t_last,
                tau_plus: 0,
                cum_stat: 0.0,
                eps_history: Vec::new(),
                time: k,
            },
        )
    } else {
        let mut history = link.eps_history;
        history.push(eps.clone());
        (
            false,
            LinkState {
                gamma_last: false,
                t_last: link.t_last,
                tau: k - link.t_last,
                tau_plus: link.tau_plus + 1,
                cum_stat: cum,
                eps_history: history,
                time: k,
            },
        )
    }
}

/// A threshold rule: either an explicit per-step sequence or a stationary
/// map from the elapsed time to a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ThresholdSchedule {
    Sequence { values: Vec<f64> },
    Stationary { by_tau_plus: Vec<f64> },
}

impl ThresholdSchedule {
    pub fn constant(delta: f64, len: usize) -> Self {
        ThresholdSchedule::Sequence { values: vec![delta; len] }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ThresholdSchedule = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let values = match self {
            ThresholdSchedule::Sequence { values } => values,
            ThresholdSchedule::Stationary { by_tau_plus } => by_tau_plus,
        };
        if values.is_empty() {
            return Err(Error::validation("threshold schedule must be non-empty"));
        }
        if values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::validation("threshold schedule entries must be positive"));
        }
        Ok(())
    }

    /// Threshold applied at step `k` (1-based) when the elapsed time after
    /// the previous step was `tau_plus_prev`.
    pub fn delta_at(&self, k: usize, tau_plus_prev: usize) -> Result<f64> {
        match self {
            ThresholdSchedule::Sequence { values } => values
                .get(k.checked_sub(1).ok_or_else(|| Error::validation("step index must be >= 1"))?)
                .copied()
                .ok_or_else(|| Error::validation(format!("schedule not defined through step {k}"))),
            ThresholdSchedule::Stationary { by_tau_plus } => {
                Ok(by_tau_plus[tau_plus_prev.min(by_tau_plus.len() - 1)])
            }
        }
    }

    /// Whether every silence interval is guaranteed to see non-increasing
    /// thresholds (sufficient condition: the rule itself is non-increasing).
    pub fn is_monotone_within_silence(&self) -> bool {
        let values = match self {
            ThresholdSchedule::Sequence { values } => values,
            ThresholdSchedule::Stationary { by_tau_plus } => by_tau_plus,
        };
        values.windows(2).all(|w| w[0] >= w[1])
    }

    /// Thresholds seen by a silence window that starts right after a
    /// transmission at time `start`, for `len` steps.
    pub(crate) fn window_thresholds(&self, start: usize, len: usize) -> Result<Vec<f64>> {
        (1..=len).map(|l| self.delta_at(start + l, l - 1)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lin_gauss::{
        kalman_predict, kalman_update, simulate_step, solve_riccati, LocalFilterState,
    };
    use crate::test_util::tracking_model;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn identity_difference_whitens() {
        let p_pred = DMatrix::identity(3, 3) * 2.0;
        let p_post = DMatrix::identity(3, 3);
        let norm = build_normalizer(&p_pred, &p_post).unwrap();
        assert_eq!(norm.q(), 3);
        let check = norm.f() * (p_pred - p_post) * norm.f().transpose();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((check[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_deficient_difference() {
        let p_pred = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let p_post = DMatrix::zeros(2, 2);
        let norm = build_normalizer(&p_pred, &p_post).unwrap();
        assert_eq!(norm.q(), 1);
        assert!((norm.f()[(0, 0)] - 0.5).abs() < 1e-14);
        assert!(norm.f()[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn steady_state_whitening_and_projector() {
        let model = tracking_model();
        let steady = solve_riccati(&model, 1e-13, 100_000).unwrap();
        let norm = build_normalizer(&steady.p_hat, &steady.p_bar).unwrap();
        assert_eq!(norm.q(), 2);
        let diff = steady.innovation_cov();
        let check = norm.f() * &diff * norm.f().transpose();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((check[(i, j)] - want).abs() < 1e-8);
            }
        }
        // F_pinv F is the orthogonal projector onto the range of diff; full
        // rank here, so the identity.
        let proj = norm.f_pinv() * norm.f();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((proj[(i, j)] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn indefinite_difference_rejected() {
        let p_pred = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p_post = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        match build_normalizer(&p_pred, &p_post) {
            Err(Error::IndefiniteDifference { .. }) => {}
            other => panic!("expected indefinite-difference error, got {other:?}"),
        }
    }

    #[test]
    fn normalize_zero() {
        let norm = build_normalizer(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).unwrap();
        let eps = normalize(&DVector::zeros(2), &norm);
        assert_eq!(eps, DVector::zeros(2));
    }

    #[test]
    fn normalized_innovations_are_white() {
        // Sample covariance of eps close to I, and lag-1 cross-covariance
        // close to 0, within 3 sigma.
        let model = tracking_model();
        let steady = solve_riccati(&model, 1e-13, 100_000).unwrap();
        let norm = build_normalizer(&steady.p_hat, &steady.p_bar).unwrap();

        let mut rng = StdRng::seed_from_u64(2024);
        let mut x = model.x0_mean().clone();
        let mut st = LocalFilterState::initial(&model);
        // Warm the filter to its fixed point.
        for _ in 0..200 {
            let (x_next, y) = simulate_step(&x, &model, &mut rng);
            x = x_next;
            st = kalman_update(&kalman_predict(&st, &model), &y, &model).unwrap();
        }
        let samples = 100_000usize;
        let mut cov = DMatrix::zeros(2, 2);
        let mut lag = DMatrix::zeros(2, 2);
        let mut prev: Option<DVector<f64>> = None;
        for _ in 0..samples {
            let (x_next, y) = simulate_step(&x, &model, &mut rng);
            x = x_next;
            st = kalman_update(&kalman_predict(&st, &model), &y, &model).unwrap();
            let eps = normalize(&st.innovation(), &norm);
            cov += &eps * eps.transpose();
            if let Some(p) = prev {
                lag += &eps * p.transpose();
            }
            prev = Some(eps);
        }
        let nf = samples as f64;
        cov /= nf;
        lag /= nf - 1.0;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                let sigma = if i == j { (2.0 / nf).sqrt() } else { (1.0 / nf).sqrt() };
                assert!(
                    (cov[(i, j)] - want).abs() < 3.0 * sigma,
                    "cov[{i}{j}] = {}",
                    cov[(i, j)]
                );
                assert!(
                    lag[(i, j)].abs() < 3.0 * (1.0 / nf).sqrt(),
                    "lag[{i}{j}] = {}",
                    lag[(i, j)]
                );
            }
        }
    }

    #[test]
    fn trigger_below_threshold_accumulates() {
        let link = LinkState::initial();
        // ||eps||^2 = 0.5
        let eps = DVector::from_row_slice(&[0.5f64.sqrt(), 0.0]);
        let (gamma, next) = trigger(link, &eps, 1.0);
        assert!(!gamma);
        assert!((next.cum_stat - 0.5).abs() < 1e-15);
        assert_eq!(next.tau_plus, 1);
        assert_eq!(next.tau, 1);
        assert_eq!(next.eps_history.len(), 1);
    }

    #[test]
    fn trigger_crossing_resets() {
        let mut link = LinkState::initial();
        link.cum_stat = 0.9;
        link.tau_plus = 1;
        link.tau = 1;
        link.time = 1;
        let eps = DVector::from_row_slice(&[0.2f64.sqrt(), 0.0]);
        let (gamma, next) = trigger(link, &eps, 1.0);
        assert!(gamma);
        assert_eq!(next.cum_stat, 0.0);
        assert_eq!(next.tau_plus, 0);
        assert_eq!(next.t_last, 2);
        assert_eq!(next.tau, 2);
        assert!(next.eps_history.is_empty());
    }

    #[test]
    fn vanishing_threshold_fires_almost_surely() {
        use rand_distr::Distribution;
        let mut rng = StdRng::seed_from_u64(77);
        let normal = rand_distr::StandardNormal;
        let mut link = LinkState::initial();
        let mut fires = 0usize;
        let steps = 10_000;
        for _ in 0..steps {
            let eps = DVector::from_fn(2, |_, _| normal.sample(&mut rng));
            let (gamma, next) = trigger(link, &eps, 1e-12);
            link = next;
            fires += gamma as usize;
        }
        let rate = fires as f64 / steps as f64;
        assert!(rate > 0.999, "rate {rate}");
    }

    #[test]
    fn schedule_json_and_validation() {
        let s = ThresholdSchedule::from_json(r#"{"type":"sequence","values":[3.0,2.0,1.0]}"#).unwrap();
        assert_eq!(s.delta_at(2, 0).unwrap(), 2.0);
        assert!(s.is_monotone_within_silence());
        assert!(s.delta_at(4, 0).is_err());

        let s = ThresholdSchedule::from_json(r#"{"type":"stationary","by_tau_plus":[2.0,1.0,0.5]}"#)
            .unwrap();
        assert_eq!(s.delta_at(10, 1).unwrap(), 1.0);
        assert_eq!(s.delta_at(10, 9).unwrap(), 0.5);

        assert!(ThresholdSchedule::from_json(r#"{"type":"sequence","values":[]}"#).is_err());
        assert!(ThresholdSchedule::from_json(r#"{"type":"sequence","values":[1.0,-2.0]}"#).is_err());
        assert!(ThresholdSchedule::from_json(r#"{"type":"sequence","values":[1.0,null]}"#).is_err());
    }

    proptest! {
        #[test]
        fn link_state_invariants(
            norms in proptest::collection::vec(0.0f64..4.0, 1..40),
            delta in 0.5f64..8.0,
        ) {
            let mut link = LinkState::initial();
            for &s in &norms {
                let eps = DVector::from_row_slice(&[s.sqrt(), 0.0]);
                let (gamma, next) = trigger(link, &eps, delta);
                // cum_stat always equals the sum over the history.
                let hist_sum: f64 = next.eps_history.iter().map(|e| e.norm_squared()).sum();
                prop_assert!((next.cum_stat - hist_sum).abs() <= 1e-10 * hist_sum.max(1.0));
                prop_assert_eq!(next.tau_plus == 0, next.gamma_last);
                if !gamma {
                    prop_assert_eq!(next.tau_plus, next.tau);
                    prop_assert!(next.cum_stat <= delta);
                }
                link = next;
            }
        }

        #[test]
        fn schedule_round_trip(values in proptest::collection::vec(0.01f64..100.0, 1..20)) {
            let s = ThresholdSchedule::Sequence { values };
            let back = ThresholdSchedule::from_json(&s.to_json()).unwrap();
            prop_assert_eq!(s, back);
        }
    }
}
