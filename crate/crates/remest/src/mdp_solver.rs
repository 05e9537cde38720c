//! Finite-state MDP over the (elapsed time, threshold) lattice and its
//! solution by value iteration.
//!
//! A state is the pair (tau_plus, delta) of the previous step; a control
//! is the threshold applied next. Every (state, control) pair has exactly
//! two successors: silence moves to (tau_plus + 1, u) — saturating at the
//! elapsed-time cap — and a transmission resets to (0, u). Stage costs are
//! the analytic silence trace or `tr(P_bar) + kappa` on transmission.
//! Chi-square CDFs and the ratio factors are precomputed per lattice
//! point, so a Bellman sweep is a pair of table lookups per control.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etc_scheme::chi2::chi2_cdf;
use crate::lin_gauss::SteadyState;
use crate::remote_estimator::beta_factor;

/// Lattice geometry and problem weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpConfig {
    /// Elapsed-time cap M; silence at M stays at M.
    #[serde(rename = "M")]
    pub max_elapsed: usize,
    /// Lattice spacing of the threshold grid.
    pub zeta: f64,
    /// Upper end of the threshold grid; the number of levels is
    /// ceil(delta_max / zeta).
    pub delta_max: f64,
    /// Discount factor, in [0, 1).
    pub alpha: f64,
    /// Price charged per transmission.
    pub kappa: f64,
    /// Degrees of freedom the cumulative statistic gains per step.
    pub dof: usize,
}

impl MdpConfig {
    pub fn n_levels(&self) -> usize {
        (self.delta_max / self.zeta).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_elapsed < 1 {
            return Err(Error::validation("M must be at least 1"));
        }
        if !(self.zeta > 0.0) || !self.zeta.is_finite() {
            return Err(Error::validation("zeta must be positive"));
        }
        if !(self.delta_max >= self.zeta) {
            return Err(Error::validation("delta_max must be at least zeta"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::validation("alpha must lie in [0, 1)"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::validation("kappa must be nonnegative"));
        }
        if self.dof == 0 {
            return Err(Error::validation("dof must be positive"));
        }
        Ok(())
    }
}

/// The assembled finite MDP. Tables are state-major with a fixed control
/// stride; only the first `caps[s]` controls of a state are admissible.
#[derive(Debug, Clone)]
pub struct MdpModel {
    config: MdpConfig,
    n_states: usize,
    n_controls: usize,
    caps: Vec<usize>,
    p_stay: Vec<f64>,
    succ_stay: Vec<u32>,
    succ_reset: Vec<u32>,
    g_stay: Vec<f64>,
    g_reset: Vec<f64>,
    /// Expected stage cost, g = p*g_stay + (1-p)*g_reset.
    g: Vec<f64>,
    lattice: bool,
}

impl MdpModel {
    pub fn config(&self) -> &MdpConfig {
        &self.config
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_controls(&self) -> usize {
        self.n_controls
    }
    /// Number of admissible controls at state `s` (positions 0..cap).
    pub fn admissible(&self, s: usize) -> usize {
        self.caps[s]
    }

    /// Threshold value of control position `pos`.
    pub fn control_value(&self, pos: usize) -> f64 {
        (pos + 1) as f64 * self.config.zeta
    }

    /// Lattice state id of (tau_plus, delta index), delta index 1-based.
    pub fn id_of(&self, tau: usize, delta_idx: usize) -> usize {
        tau * self.n_controls + (delta_idx - 1)
    }

    /// (tau_plus, delta value) of a lattice state id.
    pub fn state_of(&self, id: usize) -> (usize, f64) {
        let tau = id / self.n_controls;
        let delta_idx = id % self.n_controls + 1;
        (tau, delta_idx as f64 * self.config.zeta)
    }

    /// The state (0, zeta) used as reporting origin.
    pub fn origin(&self) -> usize {
        self.id_of(0, 1)
    }

    /// The two successors of (s, control position): (state, probability,
    /// per-transition cost).
    pub fn successors(&self, s: usize, pos: usize) -> [(usize, f64, f64); 2] {
        let i = s * self.n_controls + pos;
        [
            (self.succ_stay[i] as usize, self.p_stay[i], self.g_stay[i]),
            (self.succ_reset[i] as usize, 1.0 - self.p_stay[i], self.g_reset[i]),
        ]
    }

    /// Expected stage cost of (s, control position).
    pub fn stage_cost(&self, s: usize, pos: usize) -> f64 {
        self.g[s * self.n_controls + pos]
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: MdpConfig,
        n_states: usize,
        n_controls: usize,
        caps: Vec<usize>,
        p_stay: Vec<f64>,
        succ_stay: Vec<u32>,
        succ_reset: Vec<u32>,
        g_stay: Vec<f64>,
        g_reset: Vec<f64>,
        lattice: bool,
    ) -> Result<Self> {
        let len = n_states * n_controls;
        if [p_stay.len(), succ_stay.len(), succ_reset.len(), g_stay.len(), g_reset.len()]
            .iter()
            .any(|&l| l != len)
            || caps.len() != n_states
        {
            return Err(Error::validation("mdp table sizes inconsistent"));
        }
        let mut g = vec![f64::NAN; len];
        for (s, &cap) in caps.iter().enumerate() {
            for pos in 0..cap {
                let i = s * n_controls + pos;
                let p = p_stay[i];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::validation(format!("p out of range at ({s},{pos}): {p}")));
                }
                g[i] = p * g_stay[i] + (1.0 - p) * g_reset[i];
                if !g[i].is_finite() {
                    return Err(Error::validation("stage cost must be finite"));
                }
            }
        }
        Ok(MdpModel {
            config,
            n_states,
            n_controls,
            caps,
            p_stay,
            succ_stay,
            succ_reset,
            g_stay,
            g_reset,
            g,
            lattice,
        })
    }
}

/// Assemble the lattice MDP from the steady-state filter quantities.
///
/// Silence probabilities follow the truncated-cumulative-statistic law:
/// from (0, .) it is Pr(chi2_n <= u); from (tau, delta) it is
/// Pr(chi2_{(tau+1)n} <= u) / Pr(chi2_{tau n} <= delta), with u <= delta
/// enforced through admissibility. The elapsed-time cap closes the chain
/// by folding the out-of-range silence mass into a transmission: at tau =
/// M the next step resets with probability one. Every control then ties
/// at (M, delta) and the smallest-control tie-break applies.
pub fn build_mdp(config: &MdpConfig, steady: &SteadyState, a: &DMatrix<f64>) -> Result<MdpModel> {
    config.validate()?;
    let m_max = config.max_elapsed;
    let n_levels = config.n_levels();
    let dof = config.dof;
    let zeta = config.zeta;
    let n_states = (m_max + 1) * n_levels;

    // tr(sum_{i < tau'} A^i (P_hat - P_bar) A^i') per tau'.
    let dim = a.nrows();
    let diff = steady.innovation_cov();
    let mut trace_sums = vec![0.0f64; m_max + 1];
    let mut a_pow = DMatrix::identity(dim, dim);
    let mut acc = DMatrix::zeros(dim, dim);
    for ts in trace_sums.iter_mut().skip(1) {
        acc += &a_pow * &diff * a_pow.transpose();
        a_pow = a * &a_pow;
        *ts = acc.trace();
    }
    let tr_p_bar = steady.p_bar.trace();
    let g_transmit = tr_p_bar + config.kappa;

    // Chi-square tables over the lattice.
    let mut cdf_succ = vec![0.0f64; (m_max + 1) * n_levels]; // [(tau, u)] dof (tau+1)n
    for tau in 0..=m_max {
        for u in 1..=n_levels {
            cdf_succ[tau * n_levels + u - 1] = chi2_cdf((tau + 1) * dof, u as f64 * zeta)?;
        }
    }
    let mut cdf_state = vec![1.0f64; (m_max + 1) * n_levels]; // [(tau, delta)] dof tau*n
    for tau in 1..=m_max {
        for d in 1..=n_levels {
            cdf_state[tau * n_levels + d - 1] = chi2_cdf(tau * dof, d as f64 * zeta)?;
        }
    }
    // Silence-successor cost per (tau', u).
    let mut g_silence = vec![0.0f64; (m_max + 1) * n_levels];
    for tau_next in 1..=m_max {
        for u in 1..=n_levels {
            let beta = beta_factor(tau_next, u as f64 * zeta, dof)?;
            g_silence[tau_next * n_levels + u - 1] = tr_p_bar + beta * trace_sums[tau_next];
        }
    }

    let len = n_states * n_levels;
    let mut caps = vec![0usize; n_states];
    let mut p_stay = vec![f64::NAN; len];
    let mut succ_stay = vec![0u32; len];
    let mut succ_reset = vec![0u32; len];
    let mut g_stay = vec![f64::NAN; len];
    let mut g_reset = vec![f64::NAN; len];
    for tau in 0..=m_max {
        let tau_next = (tau + 1).min(m_max);
        for d in 1..=n_levels {
            let s = tau * n_levels + d - 1;
            caps[s] = if tau == 0 { n_levels } else { d };
            for u in 1..=caps[s] {
                let i = s * n_levels + u - 1;
                let p = if tau == m_max {
                    0.0
                } else if tau == 0 {
                    cdf_succ[u - 1]
                } else {
                    cdf_succ[tau * n_levels + u - 1] / cdf_state[tau * n_levels + d - 1]
                };
                p_stay[i] = p.clamp(0.0, 1.0);
                succ_stay[i] = (tau_next * n_levels + u - 1) as u32;
                succ_reset[i] = (u - 1) as u32;
                g_stay[i] = g_silence[tau_next * n_levels + u - 1];
                g_reset[i] = g_transmit;
            }
        }
    }
    MdpModel::from_parts(
        config.clone(),
        n_states,
        n_levels,
        caps,
        p_stay,
        succ_stay,
        succ_reset,
        g_stay,
        g_reset,
        true,
    )
}

/// A value function over the model's states.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFn {
    pub values: Vec<f64>,
}

impl ValueFn {
    pub fn zeros(model: &MdpModel) -> Self {
        ValueFn { values: vec![0.0; model.n_states()] }
    }

    pub fn sup_distance(&self, other: &ValueFn) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// A stationary policy: the chosen control position per state.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    pub action: Vec<usize>,
}

impl StationaryPolicy {
    /// Threshold value chosen at lattice state (tau, delta index).
    pub fn delta_at(&self, model: &MdpModel, tau: usize, delta_idx: usize) -> f64 {
        model.control_value(self.action[model.id_of(tau, delta_idx)])
    }
}

fn sweep(model: &MdpModel, alpha: f64, j: &[f64], out: &mut [f64]) -> f64 {
    let stride = model.n_controls;
    let mut sup = 0.0f64;
    for s in 0..model.n_states {
        let base = s * stride;
        let mut best = f64::INFINITY;
        for pos in 0..model.caps[s] {
            let i = base + pos;
            let p = model.p_stay[i];
            let q = model.g[i]
                + alpha
                    * (p * j[model.succ_stay[i] as usize]
                        + (1.0 - p) * j[model.succ_reset[i] as usize]);
            if q < best {
                best = q;
            }
        }
        out[s] = best;
        sup = sup.max((best - j[s]).abs());
    }
    sup
}

fn sweep_in_place(model: &MdpModel, alpha: f64, j: &mut [f64]) -> f64 {
    let stride = model.n_controls;
    let mut sup = 0.0f64;
    for s in 0..model.n_states {
        let base = s * stride;
        let mut best = f64::INFINITY;
        for pos in 0..model.caps[s] {
            let i = base + pos;
            let p = model.p_stay[i];
            let q = model.g[i]
                + alpha
                    * (p * j[model.succ_stay[i] as usize]
                        + (1.0 - p) * j[model.succ_reset[i] as usize]);
            if q < best {
                best = q;
            }
        }
        sup = sup.max((best - j[s]).abs());
        j[s] = best;
    }
    sup
}

fn greedy(model: &MdpModel, alpha: f64, j: &[f64]) -> StationaryPolicy {
    let stride = model.n_controls;
    let mut action = vec![0usize; model.n_states];
    for (s, act) in action.iter_mut().enumerate() {
        let base = s * stride;
        let mut best = f64::INFINITY;
        let mut best_pos = 0usize;
        // Ties break toward the smallest control.
        for pos in 0..model.caps[s] {
            let i = base + pos;
            let p = model.p_stay[i];
            let q = model.g[i]
                + alpha
                    * (p * j[model.succ_stay[i] as usize]
                        + (1.0 - p) * j[model.succ_reset[i] as usize]);
            if q < best {
                best = q;
                best_pos = pos;
            }
        }
        *act = best_pos;
    }
    StationaryPolicy { action }
}

/// One application of the Bellman operator plus the greedy policy at `j`.
pub fn bellman_backup(j: &ValueFn, model: &MdpModel) -> (ValueFn, StationaryPolicy) {
    let alpha = model.config.alpha;
    let mut out = vec![0.0; model.n_states()];
    sweep(model, alpha, &j.values, &mut out);
    let next = ValueFn { values: out };
    let policy = greedy(model, alpha, &j.values);
    (next, policy)
}

/// Converged value iteration output.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueFn,
    pub policy: StationaryPolicy,
    pub iterations: usize,
    /// Sup-norm Bellman residual ||TJ - J|| at the returned values.
    pub bellman_residual: f64,
    pub alpha: f64,
}

/// Value iteration from J = 0 at the model's configured discount.
pub fn value_iteration(model: &MdpModel, tol: f64, max_iter: usize) -> Result<Solution> {
    value_iteration_at(model, model.config.alpha, tol, max_iter, false)
}

/// Value iteration at an explicit discount factor.
///
/// Stops once successive sweeps differ by less than `tol (1 - alpha) / (2
/// alpha)` in sup norm, which guarantees the returned values are within
/// `tol` of the fixed point. `in_place` switches to Gauss-Seidel-order
/// updates (same fixed point, usually fewer sweeps).
pub fn value_iteration_at(
    model: &MdpModel,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    in_place: bool,
) -> Result<Solution> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::validation("alpha must lie in [0, 1)"));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tol must be positive"));
    }
    let threshold = if alpha > 0.0 { tol * (1.0 - alpha) / (2.0 * alpha) } else { tol };
    let mut j = vec![0.0f64; model.n_states()];
    let mut scratch = vec![0.0f64; model.n_states()];
    let mut diff = f64::INFINITY;
    for it in 1..=max_iter {
        diff = if in_place {
            sweep_in_place(model, alpha, &mut j)
        } else {
            let d = sweep(model, alpha, &j, &mut scratch);
            std::mem::swap(&mut j, &mut scratch);
            d
        };
        if diff < threshold {
            let residual = sweep(model, alpha, &j, &mut scratch);
            let values = ValueFn { values: j };
            let policy = greedy(model, alpha, &values.values);
            return Ok(Solution { values, policy, iterations: it, bellman_residual: residual, alpha });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: diff })
}

/// Evaluate a fixed stationary policy to its discounted value function.
pub fn evaluate_policy(
    model: &MdpModel,
    policy: &StationaryPolicy,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ValueFn> {
    if policy.action.len() != model.n_states() {
        return Err(Error::validation("policy size mismatch"));
    }
    for (s, &pos) in policy.action.iter().enumerate() {
        if pos >= model.caps[s] {
            return Err(Error::validation(format!("inadmissible action at state {s}")));
        }
    }
    let threshold = if alpha > 0.0 { tol * (1.0 - alpha) / (2.0 * alpha) } else { tol };
    let stride = model.n_controls;
    let mut j = vec![0.0f64; model.n_states()];
    let mut out = vec![0.0f64; model.n_states()];
    for _ in 0..max_iter {
        let mut sup = 0.0f64;
        for s in 0..model.n_states {
            let i = s * stride + policy.action[s];
            let p = model.p_stay[i];
            let q = model.g[i]
                + alpha
                    * (p * j[model.succ_stay[i] as usize]
                        + (1.0 - p) * j[model.succ_reset[i] as usize]);
            sup = sup.max((q - j[s]).abs());
            out[s] = q;
        }
        std::mem::swap(&mut j, &mut out);
        if sup < threshold {
            return Ok(ValueFn { values: j });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: f64::NAN })
}

/// Collapse an optimal lattice policy to thresholds indexed by elapsed
/// time only.
///
/// Verifies that the action at (0, delta) is the same for every delta,
/// then walks the unique silence chain (0) -> (1, u_0) -> (2, u_1) -> ...,
/// recording the threshold at each elapsed time. Errors when the
/// single-threshold-per-elapsed-time property fails.
pub fn extract_degenerate_policy(policy: &StationaryPolicy, model: &MdpModel) -> Result<Vec<f64>> {
    if !model.lattice {
        return Err(Error::validation("degenerate extraction requires the lattice model"));
    }
    if policy.action.len() != model.n_states() {
        return Err(Error::validation("policy size mismatch"));
    }
    let n_levels = model.n_controls;
    let first = policy.action[model.id_of(0, 1)];
    for d in 2..=n_levels {
        let act = policy.action[model.id_of(0, d)];
        if act != first {
            return Err(Error::DegeneracyViolation(format!(
                "action at (0, {:.3}) is {:.3} but (0, {:.3}) chose {:.3}",
                model.config.zeta,
                model.control_value(first),
                d as f64 * model.config.zeta,
                model.control_value(act),
            )));
        }
    }
    let mut thresholds = Vec::with_capacity(model.config.max_elapsed + 1);
    thresholds.push(model.control_value(first));
    let mut delta_idx = first + 1; // 1-based lattice index of the applied threshold
    for tau in 1..=model.config.max_elapsed {
        let pos = policy.action[model.id_of(tau, delta_idx)];
        if pos >= delta_idx {
            return Err(Error::DegeneracyViolation(format!(
                "inadmissible action on the reachable chain at tau_plus = {tau}"
            )));
        }
        thresholds.push(model.control_value(pos));
        delta_idx = pos + 1;
    }
    Ok(thresholds)
}

/// Vanishing-discount approximation of the optimal average cost per stage.
#[derive(Debug, Clone)]
pub struct AverageCost {
    /// (1 - alpha) J*_alpha(origin) at the largest alpha.
    pub lambda_hat: f64,
    /// (alpha, (1 - alpha) J*_alpha(origin)) over the schedule.
    pub per_alpha: Vec<(f64, f64)>,
    /// Largest deviation of (1 - alpha) J*(s) from lambda_hat over states,
    /// at the largest alpha.
    pub max_state_deviation: f64,
    pub warnings: Vec<String>,
}

/// Tolerance used for the inner value iterations of `average_cost`.
const AVERAGE_COST_VI_TOL: f64 = 1e-6;

/// Approximate the optimal average cost by (1 - alpha) J*_alpha along an
/// ascending schedule of discounts.
///
/// `tol` governs the sequence diagnostics: non-Cauchy behavior beyond it
/// is attached as a warning, and state-independence is checked at `10 *
/// tol`. The inner value iterations run at a fixed 1e-6 tolerance.
pub fn average_cost(model: &MdpModel, alphas: &[f64], tol: f64) -> Result<AverageCost> {
    if alphas.is_empty() {
        return Err(Error::validation("alpha schedule must be non-empty"));
    }
    if alphas.iter().any(|&a| !(0.0..1.0).contains(&a)) {
        return Err(Error::validation("every alpha must lie in [0, 1)"));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("alpha schedule must be strictly ascending"));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tol must be positive"));
    }
    let origin = model.origin();
    let mut per_alpha = Vec::with_capacity(alphas.len());
    let mut last: Option<Solution> = None;
    for &alpha in alphas {
        let sol = value_iteration_at(model, alpha, AVERAGE_COST_VI_TOL, 10_000_000, false)?;
        per_alpha.push((alpha, (1.0 - alpha) * sol.values.values[origin]));
        last = Some(sol);
    }
    let last = last.unwrap();
    let lambda_hat = per_alpha.last().unwrap().1;

    let mut warnings = Vec::new();
    let diffs: Vec<f64> =
        per_alpha.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    if diffs.windows(2).any(|w| w[1] > w[0] + tol) {
        warnings.push("lambda sequence is not Cauchy within tol".to_string());
    }
    let alpha_last = *alphas.last().unwrap();
    let mut max_state_deviation = 0.0f64;
    for &v in &last.values.values {
        max_state_deviation = max_state_deviation.max(((1.0 - alpha_last) * v - lambda_hat).abs());
    }
    if max_state_deviation >= 10.0 * tol {
        warnings.push(format!(
            "state dependence of (1-alpha)J* at alpha={alpha_last}: max deviation {max_state_deviation:.3e}"
        ));
    }
    Ok(AverageCost { lambda_hat, per_alpha, max_state_deviation, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lin_gauss::solve_riccati;
    use crate::test_util::tracking_model;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn reference_config(kappa: f64) -> MdpConfig {
        MdpConfig { max_elapsed: 6, zeta: 0.1, delta_max: 10.0, alpha: 0.999, kappa, dof: 2 }
    }

    fn reference_model(kappa: f64) -> MdpModel {
        let model = tracking_model();
        let steady = solve_riccati(&model, 1e-13, 100_000).unwrap();
        build_mdp(&reference_config(kappa), &steady, model.a()).unwrap()
    }

    /// Two states, two actions with known optimum: staying in state 0 costs
    /// 1 forever (value 10 at alpha 0.9), switching costs 2 and parks in the
    /// free state.
    fn two_state_model(alpha: f64) -> MdpModel {
        let config = MdpConfig {
            max_elapsed: 1,
            zeta: 1.0,
            delta_max: 2.0,
            alpha,
            kappa: 0.0,
            dof: 1,
        };
        MdpModel::from_parts(
            config,
            2,
            2,
            vec![2, 1],
            vec![1.0, 1.0, 1.0, f64::NAN],
            vec![0, 1, 1, 0],
            vec![0, 1, 1, 0],
            vec![1.0, 2.0, 0.0, f64::NAN],
            vec![1.0, 2.0, 0.0, f64::NAN],
            false,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(reference_config(5.0).validate().is_ok());
        let mut c = reference_config(5.0);
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = reference_config(5.0);
        c.zeta = 0.0;
        assert!(c.validate().is_err());
        let mut c = reference_config(5.0);
        c.dof = 0;
        assert!(c.validate().is_err());
        assert_eq!(reference_config(5.0).n_levels(), 100);
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        // Exhaustive over the reference lattice.
        let model = reference_model(5.0);
        assert_eq!(model.n_states(), 700);
        for s in 0..model.n_states() {
            for pos in 0..model.admissible(s) {
                let succ = model.successors(s, pos);
                let total: f64 = succ.iter().map(|&(_, p, _)| p).sum();
                assert!((total - 1.0).abs() < 1e-10, "row sum {total} at ({s},{pos})");
                for (_, p, _) in succ {
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }

    #[test]
    fn admissibility_masks_large_controls() {
        let model = reference_model(5.0);
        // tau = 2, delta = 1.0 (index 10): only u <= 1.0 admissible.
        let s = model.id_of(2, 10);
        assert_eq!(model.admissible(s), 10);
        // tau = 0: every control admissible regardless of delta.
        assert_eq!(model.admissible(model.id_of(0, 10)), 100);
    }

    #[test]
    fn kernel_structure_at_zero_elapsed() {
        let model = reference_model(5.0);
        let s = model.id_of(0, 37);
        for u_idx in [1usize, 10, 100] {
            let u = u_idx as f64 * 0.1;
            let [(stay, p_stay, _), (reset, p_reset, g_reset)] = model.successors(s, u_idx - 1);
            assert_eq!(stay, model.id_of(1, u_idx));
            assert_eq!(reset, model.id_of(0, u_idx));
            let want = chi2_cdf(2, u).unwrap();
            assert!((p_stay - want).abs() < 1e-12);
            assert!((p_reset - (1.0 - want)).abs() < 1e-12);
            // Transmission cost is tr(P_bar) + kappa.
            let steady = solve_riccati(&tracking_model(), 1e-13, 100_000).unwrap();
            assert!((g_reset - (steady.p_bar.trace() + 5.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn elapsed_cap_forces_a_reset() {
        // The truncated chain folds silence mass at tau = M into a
        // transmission, so the reset successor carries all probability.
        let model = reference_model(5.0);
        let s = model.id_of(6, 50);
        let [(stay, p_stay, _), (reset, p_reset, _)] = model.successors(s, 19);
        assert_eq!(stay, model.id_of(6, 20));
        assert_eq!(reset, model.id_of(0, 20));
        assert_eq!(p_stay, 0.0);
        assert_eq!(p_reset, 1.0);
        // Below the cap, silence keeps positive probability.
        let s = model.id_of(5, 50);
        let [(_, p_stay, _), _] = model.successors(s, 19);
        assert!(p_stay > 0.0);
    }

    #[test]
    fn myopic_limit_at_zero_discount() {
        let model = reference_model(5.0);
        let sol = value_iteration_at(&model, 0.0, 1e-12, 100, false).unwrap();
        for s in 0..model.n_states() {
            let min_g = (0..model.admissible(s))
                .map(|pos| model.stage_cost(s, pos))
                .fold(f64::INFINITY, f64::min);
            assert!((sol.values.values[s] - min_g).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_is_a_contraction() {
        let model = reference_model(20.0);
        let alpha = model.config().alpha;
        let mut rng = StdRng::seed_from_u64(4242);
        for _ in 0..100 {
            let j1 = ValueFn {
                values: (0..model.n_states()).map(|_| rng.random_range(-50.0..50.0)).collect(),
            };
            let j2 = ValueFn {
                values: (0..model.n_states()).map(|_| rng.random_range(-50.0..50.0)).collect(),
            };
            let (t1, _) = bellman_backup(&j1, &model);
            let (t2, _) = bellman_backup(&j2, &model);
            assert!(t1.sup_distance(&t2) <= alpha * j1.sup_distance(&j2) + 1e-12);
        }
    }

    #[test]
    fn two_state_closed_form() {
        let alpha = 0.9;
        let model = two_state_model(alpha);
        let sol = value_iteration_at(&model, alpha, 1e-10, 100_000, false).unwrap();
        // Closed form: J(1) = 0, J(0) = min(1/(1-alpha), 2 + alpha*0) = 2.
        assert!((sol.values.values[1] - 0.0).abs() < 1e-9);
        assert!((sol.values.values[0] - 2.0).abs() < 1e-9);
        assert_eq!(sol.policy.action[0], 1);
        assert!(sol.bellman_residual < 1e-9);
    }

    #[test]
    fn free_communication_transmits_maximally() {
        let model = reference_model(0.0);
        let sol = value_iteration(&model, 1e-6, 10_000_000).unwrap();
        for s in 0..model.n_states() {
            assert_eq!(sol.policy.action[s], 0, "state {s} chose {}", sol.policy.action[s]);
        }
        // Optimality cross-check: J* below the value of fixed alternatives.
        for pos in [0usize, 4, 9] {
            let fixed = StationaryPolicy { action: vec![pos; model.n_states()] };
            // Clamp to admissibility.
            let fixed = StationaryPolicy {
                action: fixed
                    .action
                    .iter()
                    .enumerate()
                    .map(|(s, &p)| p.min(model.admissible(s) - 1))
                    .collect(),
            };
            let jv = evaluate_policy(&model, &fixed, model.config().alpha, 1e-6, 10_000_000)
                .unwrap();
            for s in 0..model.n_states() {
                assert!(sol.values.values[s] <= jv.values[s] + 1e-4);
            }
        }
    }

    #[test]
    fn non_convergence_error() {
        let model = reference_model(5.0);
        match value_iteration(&model, 1e-6, 5) {
            Err(Error::NonConvergence { iterations, .. }) => assert_eq!(iterations, 5),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn in_place_matches_synchronous() {
        let model = reference_model(5.0);
        let sync = value_iteration_at(&model, 0.99, 1e-8, 1_000_000, false).unwrap();
        let gs = value_iteration_at(&model, 0.99, 1e-8, 1_000_000, true).unwrap();
        assert!(sync.values.sup_distance(&gs.values) < 1e-6);
        assert!(gs.iterations <= sync.iterations);
    }

    #[test]
    fn degenerate_extraction_and_negative_test() {
        let model = reference_model(5.0);
        let sol = value_iteration(&model, 1e-6, 10_000_000).unwrap();
        let thresholds = extract_degenerate_policy(&sol.policy, &model).unwrap();
        assert_eq!(thresholds.len(), 7);
        // The chain respects admissibility, hence is non-increasing.
        for w in thresholds.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // Perturbed policy violates degeneracy.
        let mut bad = sol.policy.clone();
        let id = model.id_of(0, 3);
        bad.action[id] = (bad.action[id] + 1) % model.n_controls();
        match extract_degenerate_policy(&bad, &model) {
            Err(Error::DegeneracyViolation(_)) => {}
            other => panic!("expected degeneracy violation, got {other:?}"),
        }
    }

    #[test]
    fn single_state_average_cost_is_stage_cost() {
        let config = MdpConfig {
            max_elapsed: 1,
            zeta: 1.0,
            delta_max: 1.0,
            alpha: 0.9,
            kappa: 0.0,
            dof: 1,
        };
        let c = 3.25;
        let model = MdpModel::from_parts(
            config, 1, 1,
            vec![1],
            vec![1.0],
            vec![0],
            vec![0],
            vec![c],
            vec![c],
            false,
        )
        .unwrap();
        // The inner value iteration stops within 1e-6 of the fixed point, so
        // (1-alpha) J* carries at most (1-alpha)*1e-6 of error.
        let avg = average_cost(&model, &[0.9, 0.99, 0.999], 1e-6).unwrap();
        assert!((avg.lambda_hat - c).abs() < 1e-6);
        for (_, l) in avg.per_alpha {
            assert!((l - c).abs() < 1e-6);
        }
        assert!(avg.max_state_deviation < 1e-6);
    }

    #[test]
    fn average_cost_schedule_validation() {
        let model = reference_model(5.0);
        assert!(average_cost(&model, &[], 1e-2).is_err());
        assert!(average_cost(&model, &[0.99, 0.99], 1e-2).is_err());
        assert!(average_cost(&model, &[0.99, 0.9], 1e-2).is_err());
        assert!(average_cost(&model, &[0.99, 1.0], 1e-2).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = reference_config(5.0);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"M\":6"));
        let back: MdpConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.max_elapsed, 6);
        assert_eq!(back.n_levels(), 100);
    }
}
