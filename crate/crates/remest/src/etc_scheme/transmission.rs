//! Unconditional transmission probability of the cumulative-innovation
//! trigger.
//!
//! Writing alpha_k = Pr(gamma_k = 1) and anchoring the recursion with a
//! transmission at time 0 (alpha_0 = 1), conditioning on the time of the
//! previous transmission gives
//!
//! `alpha_k = (1 - F_n(d_k)) alpha_{k-1}
//!           + sum_{j=2..k} (T_{j-1} - T_j) alpha_{k-j}`
//!
//! where `T_m` is the probability that a silence run survives its first m
//! steps: with u_l iid chi-square(n) increments,
//! `T_m = Pr(u_1 + ... + u_l <= d_l for all l <= m)` over the thresholds
//! the window sees. Since partial sums are nondecreasing, constraints that
//! are dominated by a later, smaller threshold are redundant; windows with
//! non-increasing thresholds collapse to a single chi-square CDF and are
//! evaluated exactly. Remaining windows reduce to a nested integral over
//! the gap sums between binding constraints, evaluated by recursive
//! adaptive quadrature up to `depth_cap` nested levels; terms beyond the
//! cap are dropped and bounded by the product of per-step marginal
//! probabilities, which is reported in the error estimate.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{ChiSquared, Distribution};
use std::collections::HashMap;

use super::chi2::{chi2_cdf, chi2_pdf};
use super::ThresholdSchedule;
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Per-level relative tolerance of the adaptive quadrature.
const QUAD_REL_TOL: f64 = 1e-6;
/// Maximum bisection depth of one adaptive quadrature level.
const QUAD_MAX_DEPTH: u32 = 40;

/// How to evaluate the silence-survival probabilities.
#[derive(Debug, Clone)]
pub enum AlphaMethod {
    /// Exact CDF evaluation where the constraint set collapses, nested
    /// adaptive quadrature up to `depth_cap` levels otherwise.
    Quadrature { depth_cap: usize },
    /// Estimate every survival probability from `samples` simulated iid
    /// chi-square sequences per distinct window.
    MonteCarlo { samples: usize, seed: u64 },
}

/// A transmission probability together with an error estimate: the
/// truncation bound for the quadrature path, a first-order propagated
/// standard error for the Monte-Carlo path.
#[derive(Debug, Clone, Copy)]
pub struct AlphaEstimate {
    pub value: f64,
    pub error: f64,
}

/// Survival probabilities T_1..T_len for one window, each with an
/// attached uncertainty (se or truncation bound).
struct WindowSurvival {
    t: Vec<f64>,
    err: Vec<f64>,
}

/// Indices (1-based) of binding constraints: l binds iff no later
/// threshold is <= it.
fn binding_indices(thresholds: &[f64]) -> Vec<usize> {
    let m = thresholds.len();
    let mut binding = Vec::new();
    let mut min_later = f64::INFINITY;
    for l in (0..m).rev() {
        if thresholds[l] < min_later {
            binding.push(l + 1);
            min_later = thresholds[l];
        }
    }
    binding.reverse();
    binding
}

/// Adaptive Simpson on [a, b] with relative tolerance.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
        converged: &mut bool,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * eps || (b - a) < 1e-14 {
            return left + right + delta / 15.0;
        }
        if depth == 0 {
            *converged = false;
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1, converged)
            + recurse(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1, converged)
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Scale the absolute tolerance by a first-pass magnitude estimate.
    let eps = rel_tol * whole.abs().max(1e-12);
    let mut converged = true;
    let v = recurse(f, a, b, fa, fm, fb, whole, eps, QUAD_MAX_DEPTH, &mut converged);
    if !converged {
        return Err(Error::QuadratureNonConvergence { partial: v });
    }
    Ok(v)
}

/// Probability that S_1 <= d_1, S_1 + S_2 <= d_2, ..., where S_i are
/// independent chi-square sums with `dofs[i]` degrees of freedom and `d`
/// is strictly increasing. `level` integrates S_{level}.
fn nested_probability(dofs: &[usize], deltas: &[f64], shift: f64, level: usize) -> Result<f64> {
    let bound = deltas[level] - shift;
    if bound <= 0.0 {
        return Ok(0.0);
    }
    if level + 1 == dofs.len() {
        return chi2_cdf(dofs[level], bound);
    }
    let integrand = |u: f64| -> f64 {
        let pdf = chi2_pdf(dofs[level], u).unwrap_or(0.0);
        if pdf == 0.0 {
            return 0.0;
        }
        pdf * nested_probability(dofs, deltas, shift + u, level + 1).unwrap_or(0.0)
    };
    adaptive_simpson(&integrand, 0.0, bound, QUAD_REL_TOL)
}

/// Survival probabilities of one window by constraint reduction plus
/// quadrature; entries beyond the depth cap carry the truncation bound in
/// `err` and 0.0 in `t`.
fn window_survival_quadrature(
    thresholds: &[f64],
    n: usize,
    depth_cap: usize,
) -> Result<WindowSurvival> {
    let len = thresholds.len();
    let mut t = Vec::with_capacity(len);
    let mut err = Vec::with_capacity(len);
    for m in 1..=len {
        let window = &thresholds[..m];
        let binding = binding_indices(window);
        let r = binding.len();
        if r - 1 > depth_cap {
            // Too deep to integrate: bound by independence of the per-step
            // increments, Pr <= prod_l Pr(chi2_n <= d_l).
            let mut bound = 1.0;
            for &d in window {
                bound *= chi2_cdf(n, d.min(1e300))?;
            }
            t.push(0.0);
            err.push(bound);
            continue;
        }
        let mut dofs = Vec::with_capacity(r);
        let mut deltas = Vec::with_capacity(r);
        let mut prev = 0usize;
        for &l in &binding {
            dofs.push((l - prev) * n);
            deltas.push(window[l - 1].min(1e300));
            prev = l;
        }
        let value = if r == 1 {
            chi2_cdf(dofs[0], deltas[0])?
        } else {
            nested_probability(&dofs, &deltas, 0.0, 0)?
        };
        t.push(value.clamp(0.0, 1.0));
        err.push(if r == 1 { 0.0 } else { QUAD_REL_TOL * value });
    }
    Ok(WindowSurvival { t, err })
}

/// Survival probabilities of one window estimated from `samples` iid
/// chi-square sequences.
fn window_survival_monte_carlo(
    thresholds: &[f64],
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<WindowSurvival> {
    let len = thresholds.len();
    let chi = ChiSquared::new(n as f64)
        .map_err(|e| Error::validation(format!("chi-square sampler: {e}")))?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut survive_counts = vec![0u64; len + 1];
    for _ in 0..samples {
        let mut cum = 0.0;
        let mut depth = 0usize;
        for (l, &d) in thresholds.iter().enumerate() {
            cum += chi.sample(&mut rng);
            if cum > d {
                break;
            }
            depth = l + 1;
        }
        for count in survive_counts.iter_mut().take(depth + 1) {
            *count += 1;
        }
    }
    let nf = samples as f64;
    let mut t = Vec::with_capacity(len);
    let mut err = Vec::with_capacity(len);
    for &count in &survive_counts[1..] {
        let p = count as f64 / nf;
        t.push(p);
        err.push((p * (1.0 - p) / nf).sqrt());
    }
    Ok(WindowSurvival { t, err })
}

/// Transmission probabilities alpha_0..alpha_k of the trigger under
/// `schedule`, with alpha_0 = 1 by the convention that the sensor
/// transmits at time 0. `n` is the per-step degrees of freedom of the
/// normalized innovation.
pub fn transmission_probability(
    schedule: &ThresholdSchedule,
    k: usize,
    n: usize,
    method: &AlphaMethod,
) -> Result<Vec<AlphaEstimate>> {
    if n == 0 {
        return Err(Error::validation("dof must be positive"));
    }
    match method {
        AlphaMethod::Quadrature { depth_cap } if *depth_cap < 1 => {
            return Err(Error::validation("depth_cap must be >= 1"));
        }
        AlphaMethod::MonteCarlo { samples, .. } if *samples < 1_000 => {
            return Err(Error::validation("monte-carlo path needs samples >= 1000"));
        }
        _ => {}
    }
    schedule.validate()?;

    // Survival probabilities per window start, cached by the threshold
    // vector (stationary schedules share one window).
    let mut cache: HashMap<Vec<u64>, WindowSurvival> = HashMap::new();
    let mut window = |start: usize, len: usize, stream: u64| -> Result<Vec<(f64, f64)>> {
        let thresholds = schedule.window_thresholds(start, len)?;
        let key: Vec<u64> = thresholds.iter().map(|v| v.to_bits()).collect();
        if !cache.contains_key(&key) {
            let surv = match method {
                AlphaMethod::Quadrature { depth_cap } => {
                    window_survival_quadrature(&thresholds, n, *depth_cap)?
                }
                AlphaMethod::MonteCarlo { samples, seed } => {
                    window_survival_monte_carlo(&thresholds, n, *samples, derive_seed(*seed, stream))?
                }
            };
            cache.insert(key.clone(), surv);
        }
        let surv = cache.get(&key).unwrap();
        Ok(surv.t.iter().copied().zip(surv.err.iter().copied()).collect())
    };

    let mut alphas: Vec<AlphaEstimate> = Vec::with_capacity(k + 1);
    alphas.push(AlphaEstimate { value: 1.0, error: 0.0 });
    for step in 1..=k {
        // j = 1: previous transmission at step-1; fire probability is the
        // single-step tail.
        let d1 = schedule.delta_at(step, 0)?;
        let fire = 1.0 - chi2_cdf(n, d1.min(1e300))?;
        let mut value = fire * alphas[step - 1].value;
        let mut error = fire * alphas[step - 1].error;
        for j in 2..=step {
            let start = step - j;
            let surv = window(start, j, start as u64)?;
            let (t_prev, e_prev) = surv[j - 2];
            let (t_cur, e_cur) = surv[j - 1];
            let term = (t_prev - t_cur).max(0.0);
            let a = alphas[step - j];
            value += term * a.value;
            error += (e_prev + e_cur) * a.value + term * a.error;
        }
        alphas.push(AlphaEstimate { value: value.clamp(0.0, 1.0), error });
    }
    Ok(alphas)
}
