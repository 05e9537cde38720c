//! End-to-end Monte-Carlo simulation of plant, local filter, trigger, and
//! remote estimator under a threshold policy, with cost accounting.
//!
//! Episodes are reproducible from a seed; Monte-Carlo aggregation derives
//! per-run seeds from a master seed and reduces in run order, so results
//! do not depend on thread count. Stage cost at step k is the analytic
//! `tr(P_k) + kappa * gamma_k` (the objective the threshold policy
//! optimizes); realized squared errors are logged for consistency checks
//! only.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::etc_scheme::{build_normalizer, normalize, ThresholdSchedule};
use crate::lin_gauss::{
    kalman_predict, kalman_update, simulate_step, LocalFilterState, SteadyState, SystemModel,
};
use crate::mdp_solver::{MdpModel, StationaryPolicy};
use crate::remote_estimator::{beta_factor, remote_update, EtaOptions, RemoteState};
use crate::seeding::run_seed;

/// Threshold source for a simulated episode.
#[derive(Debug, Clone, Copy)]
pub enum SimPolicy<'a> {
    /// A schedule: per-step sequence or stationary map from elapsed time.
    Schedule(&'a ThresholdSchedule),
    /// A lattice policy together with the model that interprets it.
    Lattice { policy: &'a StationaryPolicy, model: &'a MdpModel },
}

impl SimPolicy<'_> {
    fn label(&self) -> String {
        match self {
            SimPolicy::Schedule(ThresholdSchedule::Sequence { .. }) => "sequence".to_string(),
            SimPolicy::Schedule(ThresholdSchedule::Stationary { .. }) => "stationary".to_string(),
            SimPolicy::Lattice { .. } => "lattice".to_string(),
        }
    }
}

/// Which local filter the episode runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Local filter pinned at its fixed point (the optimization setting);
    /// the initial estimation error is drawn from the steady posterior.
    SteadyState,
    /// Full time-varying filter from P0, with the general remote update.
    Transient,
}

/// Episode parameters beyond the policy.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions {
    pub kappa: f64,
    /// Elapsed-time cap: policy lookup and the analytic silence covariance
    /// saturate here, mirroring the finite lattice.
    pub elapsed_cap: usize,
    pub mode: FilterMode,
}

/// One simulated step.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub gamma: bool,
    pub tau_plus: usize,
    pub delta: f64,
    /// Analytic remote MSE trace at this step.
    pub tr_p: f64,
    /// Trace upper bound for the silence MSE (equals tr_p on
    /// transmission steps); lets consumers run the bound-based variant.
    pub tr_p_bound: f64,
    /// Realized squared remote estimation error.
    pub sq_err: f64,
    pub stage_cost: f64,
}

/// Per-step record of one episode.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    /// Realized remote estimation error x_k - x_hat_k per step (not part
    /// of the serialized trace; used by consistency checks).
    #[serde(skip)]
    pub remote_errors: Vec<DVector<f64>>,
    pub seed: u64,
    pub policy_id: String,
}

impl EpisodeTrace {
    pub fn comm_rate(&self) -> f64 {
        self.steps.iter().filter(|s| s.gamma).count() as f64 / self.steps.len() as f64
    }

    pub fn discounted_cost(&self, alpha: f64) -> f64 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for s in &self.steps {
            total += disc * s.stage_cost;
            disc *= alpha;
        }
        total
    }

    pub fn time_average_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.stage_cost).sum::<f64>() / self.steps.len() as f64
    }

    /// CSV with header `k,gamma,tau_plus,delta,tr_p,tr_p_bound,sq_err,stage_cost`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,gamma,tau_plus,delta,tr_p,tr_p_bound,sq_err,stage_cost\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.k, s.gamma as u8, s.tau_plus, s.delta, s.tr_p, s.tr_p_bound, s.sq_err, s.stage_cost
            ));
        }
        out
    }
}

/// Cached silence traces and their upper bounds:
/// trace = tr(P_bar) + beta(tau, delta) * trace_sums[tau],
/// bound = tr(P_bar) + tau * n * beta(tau, delta) * lambda_max[tau].
struct SilenceTraceTable {
    tr_p_bar: f64,
    trace_sums: Vec<f64>,
    /// Largest eigenvalue over the propagated innovation-covariance
    /// blocks up to each elapsed time.
    lambda_max: Vec<f64>,
    dof: usize,
    cache: HashMap<(usize, u64), (f64, f64)>,
}

impl SilenceTraceTable {
    fn new(steady: &SteadyState, a: &DMatrix<f64>, cap: usize, dof: usize) -> Self {
        let n = a.nrows();
        let diff = steady.innovation_cov();
        let mut trace_sums = vec![0.0; cap + 1];
        let mut lambda_max = vec![0.0; cap + 1];
        let mut a_pow = DMatrix::identity(n, n);
        let mut acc = DMatrix::zeros(n, n);
        let mut top = 0.0f64;
        for tau in 1..=cap {
            let block = &a_pow * &diff * a_pow.transpose();
            top = top.max(
                block.clone().symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l)),
            );
            acc += block;
            a_pow = a * &a_pow;
            trace_sums[tau] = acc.trace();
            lambda_max[tau] = top;
        }
        SilenceTraceTable {
            tr_p_bar: steady.p_bar.trace(),
            trace_sums,
            lambda_max,
            dof,
            cache: HashMap::new(),
        }
    }

    /// (analytic trace, trace upper bound) of the silence covariance.
    fn trace_and_bound(&mut self, tau_plus: usize, delta: f64) -> Result<(f64, f64)> {
        if tau_plus == 0 {
            return Ok((self.tr_p_bar, self.tr_p_bar));
        }
        if let Some(&v) = self.cache.get(&(tau_plus, delta.to_bits())) {
            return Ok(v);
        }
        let beta = beta_factor(tau_plus, delta, self.dof)?;
        let trace = self.tr_p_bar + beta * self.trace_sums[tau_plus];
        let bound = self.tr_p_bar
            + (tau_plus * self.dof) as f64 * beta * self.lambda_max[tau_plus];
        self.cache.insert((tau_plus, delta.to_bits()), (trace, bound));
        Ok((trace, bound))
    }
}

fn next_delta(
    policy: &SimPolicy,
    k: usize,
    tau_plus_prev: usize,
    lattice_delta_idx: &mut usize,
) -> Result<f64> {
    match policy {
        SimPolicy::Schedule(s) => s.delta_at(k, tau_plus_prev),
        SimPolicy::Lattice { policy, model } => {
            let tau = tau_plus_prev.min(model.config().max_elapsed);
            let pos = policy.action[model.id_of(tau, *lattice_delta_idx)];
            if tau > 0 && pos + 1 > *lattice_delta_idx {
                return Err(Error::validation("lattice policy is inadmissible"));
            }
            *lattice_delta_idx = pos + 1;
            Ok(model.control_value(pos))
        }
    }
}

/// Simulate one episode of `t_steps` steps.
///
/// The sensor transmits at time 0 by convention; costs accrue from step 1.
pub fn run_episode(
    model: &SystemModel,
    steady: &SteadyState,
    policy: &SimPolicy,
    t_steps: usize,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    if t_steps < 1 {
        return Err(Error::validation("episode needs at least one step"));
    }
    if opts.elapsed_cap < 1 {
        return Err(Error::validation("elapsed cap must be at least 1"));
    }
    match opts.mode {
        FilterMode::SteadyState => run_episode_steady(model, steady, policy, t_steps, seed, opts),
        FilterMode::Transient => run_episode_transient(model, steady, policy, t_steps, seed, opts),
    }
}

fn run_episode_steady(
    model: &SystemModel,
    steady: &SteadyState,
    policy: &SimPolicy,
    t_steps: usize,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    let mut rng = StdRng::seed_from_u64(seed);
    let normalizer = build_normalizer(&steady.p_hat, &steady.p_bar)?;
    let dof = normalizer.q();
    let mut traces = SilenceTraceTable::new(steady, model.a(), opts.elapsed_cap, dof);

    // Start the filter at its fixed point: the initial estimation error is
    // steady-posterior distributed around the local estimate.
    let mut x_local = model.x0_mean().clone();
    let mut x = &x_local + crate::lin_gauss::sample_gaussian(&steady.p_bar, &mut rng)?;

    let mut x_remote = x_local.clone();
    let mut tau_plus = 0usize;
    let mut cum = 0.0f64;
    let mut lattice_delta_idx = 1usize;
    let mut steps = Vec::with_capacity(t_steps);
    let mut remote_errors = Vec::with_capacity(t_steps);
    for k in 1..=t_steps {
        let delta = next_delta(policy, k, tau_plus, &mut lattice_delta_idx)?;
        if !(delta > 0.0) {
            return Err(Error::validation("policy produced a nonpositive threshold"));
        }
        let (x_next, y) = simulate_step(&x, model, &mut rng);
        x = x_next;
        let x_pred = model.a() * &x_local;
        let innovation = &steady.gain * (&y - model.c() * &x_pred);
        x_local = &x_pred + &innovation;
        let eps = normalize(&innovation, &normalizer);
        cum += eps.norm_squared();
        let gamma = cum > delta;
        let (tr_p, tr_p_bound);
        if gamma {
            cum = 0.0;
            tau_plus = 0;
            x_remote = x_local.clone();
            tr_p = traces.tr_p_bar;
            tr_p_bound = tr_p;
        } else {
            tau_plus = (tau_plus + 1).min(opts.elapsed_cap);
            x_remote = model.a() * &x_remote;
            (tr_p, tr_p_bound) = traces.trace_and_bound(tau_plus, delta)?;
        }
        let err = &x - &x_remote;
        let sq_err = err.norm_squared();
        remote_errors.push(err);
        steps.push(StepRecord {
            k,
            gamma,
            tau_plus,
            delta,
            tr_p,
            tr_p_bound,
            sq_err,
            stage_cost: tr_p + opts.kappa * (gamma as u8 as f64),
        });
    }
    Ok(EpisodeTrace { steps, remote_errors, seed, policy_id: policy.label() })
}

fn run_episode_transient(
    model: &SystemModel,
    _steady: &SteadyState,
    policy: &SimPolicy,
    t_steps: usize,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut x = model.sample_initial_state(&mut rng)?;
    let mut local = LocalFilterState::initial(model);
    let mut remote = RemoteState::from_transmission(local.x_post.clone(), local.p_post.clone());
    let eta = EtaOptions::default();
    let mut tau_plus = 0usize;
    let mut cum = 0.0f64;
    let mut lattice_delta_idx = 1usize;
    let mut steps = Vec::with_capacity(t_steps);
    let mut remote_errors = Vec::with_capacity(t_steps);
    for k in 1..=t_steps {
        let delta = next_delta(policy, k, tau_plus, &mut lattice_delta_idx)?;
        let (x_next, y) = simulate_step(&x, model, &mut rng);
        x = x_next;
        local = kalman_update(&kalman_predict(&local, model), &y, model)?;
        let normalizer = build_normalizer(&local.p_pred, &local.p_post)?;
        let eps = normalize(&local.innovation(), &normalizer);
        cum += eps.norm_squared();
        let gamma = cum > delta;
        if gamma {
            cum = 0.0;
            tau_plus = 0;
            remote = remote_update(&remote, true, Some(&local.x_post), &local, delta, model.a(), &eta)?;
        } else {
            tau_plus = (tau_plus + 1).min(opts.elapsed_cap);
            remote = remote_update(&remote, false, None, &local, delta, model.a(), &eta)?;
        }
        let tr_p = remote.p.trace();
        let tr_p_bound = if gamma {
            tr_p
        } else {
            // Bound from the actual silence-window blocks.
            let tau = remote.delta_blocks.len();
            let n = model.state_dim();
            let mut lam = 0.0f64;
            let mut a_pow = DMatrix::identity(n, n);
            for i in 0..tau {
                let block = &a_pow * &remote.delta_blocks[tau - 1 - i] * a_pow.transpose();
                lam = lam.max(
                    block.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l)),
                );
                a_pow = model.a() * a_pow;
            }
            let dof = crate::lin_gauss::psd_rank(remote.delta_blocks.last().unwrap());
            local.p_post.trace() + (tau * dof) as f64 * beta_factor(tau, delta, dof)? * lam
        };
        let err = &x - &remote.x_hat;
        let sq_err = err.norm_squared();
        remote_errors.push(err);
        steps.push(StepRecord {
            k,
            gamma,
            tau_plus,
            delta,
            tr_p,
            tr_p_bound,
            sq_err,
            stage_cost: tr_p + opts.kappa * (gamma as u8 as f64),
        });
    }
    Ok(EpisodeTrace { steps, remote_errors, seed, policy_id: policy.label() })
}

/// Aggregated Monte-Carlo costs.
#[derive(Debug, Clone, Serialize)]
pub struct CostSummary {
    /// Mean empirical discounted cost across runs, with its standard error.
    pub discounted_cost: f64,
    pub discounted_se: f64,
    /// Running average over steps of the per-step sample-mean stage cost.
    pub time_avg_curve: Vec<f64>,
    /// Final entry of the running-average curve.
    pub time_avg_final: f64,
    /// Standard error of the per-run time averages.
    pub time_avg_se: f64,
    pub comm_rate: f64,
    pub comm_rate_se: f64,
    pub runs: usize,
    pub steps: usize,
    pub master_seed: u64,
}

struct RunStats {
    step_costs: Vec<f64>,
    discounted: f64,
    time_avg: f64,
    comm_rate: f64,
}

/// Average `runs` episodes with per-run derived seeds.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_cost(
    model: &SystemModel,
    steady: &SteadyState,
    policy: &SimPolicy,
    t_steps: usize,
    runs: usize,
    alpha: f64,
    master_seed: u64,
    opts: &EpisodeOptions,
) -> Result<CostSummary> {
    if runs < 1 {
        return Err(Error::validation("need at least one run"));
    }
    let stats: Vec<Result<RunStats>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let trace =
                run_episode(model, steady, policy, t_steps, run_seed(master_seed, r as u64), opts)?;
            Ok(RunStats {
                step_costs: trace.steps.iter().map(|s| s.stage_cost).collect(),
                discounted: trace.discounted_cost(alpha),
                time_avg: trace.time_average_cost(),
                comm_rate: trace.comm_rate(),
            })
        })
        .collect();
    let mut per_run = Vec::with_capacity(runs);
    for s in stats {
        per_run.push(s?);
    }

    let nf = runs as f64;
    let mean_se = |vals: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
        let v: Vec<f64> = vals.collect();
        let m = v.iter().sum::<f64>() / nf;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / nf.max(2.0);
        (m, (var / nf).sqrt())
    };
    let (discounted_cost, discounted_se) = mean_se(&mut per_run.iter().map(|r| r.discounted));
    let (time_avg_final, time_avg_se) = mean_se(&mut per_run.iter().map(|r| r.time_avg));
    let (comm_rate, comm_rate_se) = mean_se(&mut per_run.iter().map(|r| r.comm_rate));

    let mut curve = Vec::with_capacity(t_steps);
    let mut acc = 0.0;
    for k in 0..t_steps {
        let mean_k = per_run.iter().map(|r| r.step_costs[k]).sum::<f64>() / nf;
        acc += mean_k;
        curve.push(acc / (k + 1) as f64);
    }

    Ok(CostSummary {
        discounted_cost,
        discounted_se,
        time_avg_curve: curve,
        time_avg_final,
        time_avg_se,
        comm_rate,
        comm_rate_se,
        runs,
        steps: t_steps,
        master_seed,
    })
}

/// One line of a policy comparison at a fixed kappa.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyComparisonRow {
    pub policy: String,
    pub discounted: f64,
    pub discounted_se: f64,
    pub time_avg: f64,
    pub time_avg_se: f64,
    pub comm_rate: f64,
}

/// Comparison of several policies under one kappa.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyComparison {
    pub kappa: f64,
    pub rows: Vec<PolicyComparisonRow>,
}

impl PolicyComparison {
    /// Whether the named policy attains the column minimum within
    /// `n_se` combined standard errors, on both cost columns.
    pub fn reference_is_minimal(&self, reference: &str, n_se: f64) -> bool {
        let Some(r) = self.rows.iter().find(|row| row.policy == reference) else {
            return false;
        };
        self.rows.iter().all(|row| {
            let disc_ok = r.discounted
                <= row.discounted + n_se * (r.discounted_se.hypot(row.discounted_se));
            let avg_ok =
                r.time_avg <= row.time_avg + n_se * (r.time_avg_se.hypot(row.time_avg_se));
            disc_ok && avg_ok
        })
    }
}

/// Simulate every named policy under the same master seed (common random
/// numbers) and tabulate costs.
#[allow(clippy::too_many_arguments)]
pub fn policy_comparison(
    model: &SystemModel,
    steady: &SteadyState,
    entries: &[(String, SimPolicy)],
    t_steps: usize,
    runs: usize,
    alpha: f64,
    master_seed: u64,
    opts: &EpisodeOptions,
) -> Result<PolicyComparison> {
    if entries.is_empty() {
        return Err(Error::validation("need at least one policy"));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for (name, policy) in entries {
        let summary =
            monte_carlo_cost(model, steady, policy, t_steps, runs, alpha, master_seed, opts)?;
        rows.push(PolicyComparisonRow {
            policy: name.clone(),
            discounted: summary.discounted_cost,
            discounted_se: summary.discounted_se,
            time_avg: summary.time_avg_final,
            time_avg_se: summary.time_avg_se,
            comm_rate: summary.comm_rate,
        });
    }
    Ok(PolicyComparison { kappa: opts.kappa, rows })
}
