//! Report types and CSV rendering. Every report embeds the resolved
//! configuration and master seed, so each number is re-derivable from the
//! report alone.

use crate::config::{PolicyFile, RunConfig};
use remest::sim_harness::PolicyComparison;
use remest::validation::ValidationReport;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct SolveRow {
    pub kappa: f64,
    pub j_star_origin: f64,
    pub thresholds_by_tau_plus: Vec<f64>,
    pub lambda_hat: f64,
    pub bellman_residual: f64,
    pub iterations: usize,
    /// (alpha, (1 - alpha) J*_alpha(origin)) over the schedule.
    pub per_alpha: Vec<(f64, f64)>,
    pub max_state_deviation: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub config: RunConfig,
    pub seed: u64,
    pub rows: Vec<SolveRow>,
    /// How lambda_hat relates to the discounted optimum it was taken from.
    pub note: String,
}

/// CSV shaped like the optimization-results table: one row per kappa with
/// the optimal cost, thresholds by elapsed time, and the average cost.
pub fn policy_table_csv(rows: &[SolveRow], max_elapsed: usize) -> String {
    let mut out = String::from("kappa,j_star");
    for tau in 0..=max_elapsed {
        out.push_str(&format!(",tau_plus_{tau}"));
    }
    out.push_str(",lambda_hat\n");
    for row in rows {
        out.push_str(&format!("{},{}", row.kappa, row.j_star_origin));
        for d in &row.thresholds_by_tau_plus {
            out.push_str(&format!(",{d}"));
        }
        out.push_str(&format!(",{}\n", row.lambda_hat));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub kappa: f64,
    pub comm_rate: f64,
    pub comm_rate_se: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub kappa: f64,
    /// Reference average cost the curve should approach.
    pub lambda_ref: f64,
    pub final_avg: f64,
    pub rel_gap: f64,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonBlock {
    pub kappa: f64,
    pub comparison: PolicyComparison,
    pub mdp_is_minimal: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub config: RunConfig,
    pub seed: u64,
    pub policies: Vec<PolicyFile>,
    pub rates: Vec<RateRow>,
    pub curves: Vec<CurveRow>,
    pub comparisons: Vec<ComparisonBlock>,
    /// (kappa, per-step CSV of one sample episode); written as files, not
    /// into the JSON report.
    #[serde(skip)]
    pub traces: Vec<(f64, String)>,
}

pub fn comm_rates_csv(rates: &[RateRow]) -> String {
    let mut out = String::from("kappa,comm_rate,comm_rate_se,steps\n");
    for r in rates {
        out.push_str(&format!("{},{},{},{}\n", r.kappa, r.comm_rate, r.comm_rate_se, r.steps));
    }
    out
}

pub fn running_average_csv(curves: &[CurveRow]) -> String {
    let mut out = String::from("kappa,step,running_avg,lambda_ref\n");
    for c in curves {
        for (k, v) in c.curve.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", c.kappa, k + 1, v, c.lambda_ref));
        }
    }
    out
}

pub fn policy_comparison_csv(blocks: &[ComparisonBlock]) -> String {
    let mut out =
        String::from("kappa,policy,discounted,discounted_se,time_avg,time_avg_se,comm_rate\n");
    for b in blocks {
        for row in &b.comparison.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                b.kappa,
                row.policy,
                row.discounted,
                row.discounted_se,
                row.time_avg,
                row.time_avg_se,
                row.comm_rate
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub config: RunConfig,
    pub report: ValidationReport,
}
