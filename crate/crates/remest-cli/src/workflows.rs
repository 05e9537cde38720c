//! The three workflows behind the subcommands. They return report data;
//! the binary does the file writing.

use crate::config::{PolicyFile, RunConfig};
use crate::report::{
    ComparisonBlock, CurveRow, RateRow, SimulateReport, SolveReport, SolveRow, ValidateReport,
};
use remest::error::{Error, Result};
use remest::etc_scheme::ThresholdSchedule;
use remest::lin_gauss::{solve_riccati, SteadyState, SystemModel};
use remest::mdp_solver::{
    average_cost, build_mdp, extract_degenerate_policy, value_iteration,
};
use remest::seeding::derive_seed;
use remest::sim_harness::{
    monte_carlo_cost, policy_comparison, run_episode, EpisodeOptions, FilterMode, SimPolicy,
};
use remest::validation;

const RICCATI_TOL: f64 = 1e-12;
const VI_TOL: f64 = 1e-6;
const MAX_ITER: usize = 10_000_000;
const AVG_COST_TOL: f64 = 0.01;

fn steady_state(model: &SystemModel) -> Result<SteadyState> {
    solve_riccati(model, RICCATI_TOL, 1_000_000)
}

/// Solve the optimization per kappa: Riccati fixed point, lattice MDP,
/// value iteration, degenerate thresholds, and the average-cost limit.
pub fn solve(config: &RunConfig) -> Result<(SolveReport, Vec<PolicyFile>)> {
    let model = config.system_model()?;
    let steady = steady_state(&model)?;
    let seed = config.simulation.master_seed;
    let mut rows = Vec::new();
    let mut policies = Vec::new();
    for &kappa in &config.kappas() {
        let mdp_config = config.mdp_config(&model, kappa);
        let mdp = build_mdp(&mdp_config, &steady, model.a())?;
        let solution = value_iteration(&mdp, VI_TOL, MAX_ITER)?;
        let thresholds = extract_degenerate_policy(&solution.policy, &mdp)?;
        let avg = average_cost(&mdp, &config.alpha_schedule, AVG_COST_TOL)?;
        let j_star_origin = solution.values.values[mdp.origin()];
        rows.push(SolveRow {
            kappa,
            j_star_origin,
            thresholds_by_tau_plus: thresholds.clone(),
            lambda_hat: avg.lambda_hat,
            bellman_residual: solution.bellman_residual,
            iterations: solution.iterations,
            per_alpha: avg.per_alpha.clone(),
            max_state_deviation: avg.max_state_deviation,
            warnings: avg.warnings.clone(),
        });
        policies.push(PolicyFile {
            kappa,
            alpha: config.mdp.alpha,
            mdp: crate::config::MdpSection { kappa, ..config.mdp.clone() },
            thresholds_by_tau_plus: thresholds,
            j_star_origin,
            lambda_hat: avg.lambda_hat,
            bellman_residual: solution.bellman_residual,
            seed,
        });
    }
    let report = SolveReport {
        config: config.clone(),
        seed,
        rows,
        note: "lambda_hat is (1-alpha) J*_alpha(origin) at the largest alpha of the schedule; \
               j_star is reported at the origin state (0, zeta). The two are related by the \
               vanishing-discount limit, not by the configured alpha alone."
            .to_string(),
    };
    Ok((report, policies))
}

/// Obtain the policy for one kappa: from a provided file (validated
/// against the configuration) or by solving in-process.
fn policy_for_kappa(
    config: &RunConfig,
    model: &SystemModel,
    steady: &SteadyState,
    provided: &[PolicyFile],
    kappa: f64,
) -> Result<PolicyFile> {
    if let Some(p) = provided.iter().find(|p| p.kappa == kappa) {
        if p.mdp.max_elapsed != config.mdp.max_elapsed {
            return Err(Error::validation(format!(
                "policy for kappa={kappa} was solved with M={} but the config has M={}",
                p.mdp.max_elapsed, config.mdp.max_elapsed
            )));
        }
        return Ok(p.clone());
    }
    if !provided.is_empty() {
        return Err(Error::validation(format!("no provided policy matches kappa={kappa}")));
    }
    let mdp_config = config.mdp_config(model, kappa);
    let mdp = build_mdp(&mdp_config, steady, model.a())?;
    let solution = value_iteration(&mdp, VI_TOL, MAX_ITER)?;
    let thresholds = extract_degenerate_policy(&solution.policy, &mdp)?;
    let j_star_origin = solution.values.values[mdp.origin()];
    Ok(PolicyFile {
        kappa,
        alpha: config.mdp.alpha,
        mdp: crate::config::MdpSection { kappa, ..config.mdp.clone() },
        thresholds_by_tau_plus: thresholds,
        j_star_origin,
        lambda_hat: (1.0 - config.mdp.alpha) * j_star_origin,
        bellman_residual: solution.bellman_residual,
        seed: config.simulation.master_seed,
    })
}

/// Monte-Carlo workflows: communication rates, running-average curves,
/// and the comparison against fixed-threshold baselines.
pub fn simulate(config: &RunConfig, provided: &[PolicyFile]) -> Result<SimulateReport> {
    let model = config.system_model()?;
    let steady = steady_state(&model)?;
    let sim = &config.simulation;
    let seed = sim.master_seed;
    let mut policies = Vec::new();
    let mut rates = Vec::new();
    let mut curves = Vec::new();
    let mut comparisons = Vec::new();
    let mut traces = Vec::new();
    for (i, &kappa) in config.kappas().iter().enumerate() {
        let policy = policy_for_kappa(config, &model, &steady, provided, kappa)?;
        let schedule =
            ThresholdSchedule::Stationary { by_tau_plus: policy.thresholds_by_tau_plus.clone() };
        let opts = EpisodeOptions {
            kappa,
            elapsed_cap: config.mdp.max_elapsed,
            mode: FilterMode::SteadyState,
        };

        // Communication rate from one long episode.
        let rate_trace = run_episode(
            &model,
            &steady,
            &SimPolicy::Schedule(&schedule),
            sim.rate_steps,
            derive_seed(seed, 0x0a00 + i as u64),
            &opts,
        )?;
        let rate = rate_trace.comm_rate();
        rates.push(RateRow {
            kappa,
            comm_rate: rate,
            comm_rate_se: (rate * (1.0 - rate) / sim.rate_steps as f64).sqrt(),
            steps: sim.rate_steps,
        });

        // Running-average curve against the policy's average cost.
        let summary = monte_carlo_cost(
            &model,
            &steady,
            &SimPolicy::Schedule(&schedule),
            sim.steps,
            sim.runs,
            config.mdp.alpha,
            derive_seed(seed, 0x0b00 + i as u64),
            &opts,
        )?;
        let lambda_ref = policy.lambda_hat;
        curves.push(CurveRow {
            kappa,
            lambda_ref,
            final_avg: summary.time_avg_final,
            rel_gap: (summary.time_avg_final - lambda_ref).abs() / lambda_ref,
            curve: summary.time_avg_curve.clone(),
        });

        // Comparison against the fixed-threshold baselines.
        let fixed: Vec<(String, ThresholdSchedule)> = config
            .fixed_thresholds
            .iter()
            .map(|&d| {
                (format!("fixed_{d}"), ThresholdSchedule::Stationary { by_tau_plus: vec![d] })
            })
            .collect();
        let mut entries: Vec<(String, SimPolicy)> =
            vec![("mdp".to_string(), SimPolicy::Schedule(&schedule))];
        for (name, s) in &fixed {
            entries.push((name.clone(), SimPolicy::Schedule(s)));
        }
        let comparison = policy_comparison(
            &model,
            &steady,
            &entries,
            sim.steps,
            sim.runs,
            config.mdp.alpha,
            derive_seed(seed, 0x0c00 + i as u64),
            &opts,
        )?;
        let mdp_is_minimal = comparison.reference_is_minimal("mdp", 2.0);
        comparisons.push(ComparisonBlock { kappa, comparison, mdp_is_minimal });

        // One sample per-step trace per kappa for inspection.
        let sample = run_episode(
            &model,
            &steady,
            &SimPolicy::Schedule(&schedule),
            sim.steps,
            derive_seed(seed, 0x0d00 + i as u64),
            &opts,
        )?;
        traces.push((kappa, sample.to_csv()));
        policies.push(policy);
    }
    Ok(SimulateReport { config: config.clone(), seed, policies, rates, curves, comparisons, traces })
}

/// Run the property suites.
pub fn validate(config: &RunConfig) -> Result<ValidateReport> {
    let model = config.system_model()?;
    let steady = steady_state(&model)?;
    let mdp_config = config.mdp_config(&model, config.mdp.kappa);
    let report = validation::run_all(&model, &steady, &mdp_config, config.simulation.master_seed)?;
    Ok(ValidateReport { config: config.clone(), report })
}
