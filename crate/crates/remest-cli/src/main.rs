//! `remest` command line: solve the optimal threshold policy, run the
//! Monte-Carlo workflows, or validate the numerical properties.

use clap::{Parser, Subcommand};
use remest_cli::config::{PolicyFile, RunConfig};
use remest_cli::report::{
    comm_rates_csv, policy_comparison_csv, policy_table_csv, running_average_csv,
};
use remest_cli::{exit_code_for, exit_codes, workflows};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "remest",
    about = "Event-triggered remote state estimation: optimal threshold policies, \
             Monte-Carlo simulation, and property validation",
    version
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, default_value = "remest.json")]
    config: PathBuf,
    /// Master seed override; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Transmission-price grid override, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    kappa: Option<Vec<f64>>,
    /// Discount schedule override for the average-cost limit, comma
    /// separated and ascending.
    #[arg(long, global = true, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Worker threads for Monte-Carlo runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute optimal thresholds, costs, and the average-cost limit per kappa.
    Solve,
    /// Simulate policies: communication rates, running-average curves, and
    /// the fixed-threshold comparison.
    Simulate {
        /// Solved policy files (from `solve`); without them the policies
        /// are solved in-process.
        #[arg(long)]
        policy: Vec<PathBuf>,
    },
    /// Run the cross-module property suites and report pass/fail.
    Validate,
}

fn load_config(cli: &Cli) -> Result<RunConfig, remest::Error> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.simulation.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(kappas) = &cli.kappa {
        config.kappa_grid = kappas.clone();
    }
    if let Some(alphas) = &cli.alpha {
        config.alpha_schedule = alphas.clone();
    }
    config.validate()?;
    Ok(config)
}

fn write(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf, remest::Error> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: &Cli) -> Result<u8, remest::Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| remest::Error::validation(format!("thread pool: {e}")))?;
    }
    let config = load_config(cli)?;
    let out_dir = PathBuf::from(&config.out_dir);
    match &cli.command {
        Command::Solve => {
            let (report, policies) = workflows::solve(&config)?;
            let csv = policy_table_csv(&report.rows, config.mdp.max_elapsed);
            let table = write(&out_dir, "policy_table.csv", &csv)?;
            let rep = write(&out_dir, "solve_report.json", &json(&report))?;
            for policy in &policies {
                write(&out_dir, &format!("policy_kappa_{}.json", policy.kappa), &json(policy))?;
            }
            for row in &report.rows {
                println!(
                    "kappa={}: thresholds={:?} lambda_hat={:.4} residual={:.2e}",
                    row.kappa, row.thresholds_by_tau_plus, row.lambda_hat, row.bellman_residual
                );
            }
            println!("wrote {} and {}", table.display(), rep.display());
            Ok(exit_codes::OK)
        }
        Command::Simulate { policy } => {
            let mut provided = Vec::new();
            for path in policy {
                let text = std::fs::read_to_string(path)?;
                provided.push(PolicyFile::from_json(&text)?);
            }
            let report = workflows::simulate(&config, &provided)?;
            write(&out_dir, "comm_rates.csv", &comm_rates_csv(&report.rates))?;
            write(&out_dir, "running_average.csv", &running_average_csv(&report.curves))?;
            write(&out_dir, "policy_comparison.csv", &policy_comparison_csv(&report.comparisons))?;
            for (kappa, csv) in &report.traces {
                write(&out_dir, &format!("episode_kappa_{kappa}.csv"), csv)?;
            }
            let rep = write(&out_dir, "simulate_report.json", &json(&report))?;
            for c in &report.curves {
                println!(
                    "kappa={}: final running avg {:.4} vs lambda {:.4} (gap {:.2}%)",
                    c.kappa,
                    c.final_avg,
                    c.lambda_ref,
                    100.0 * c.rel_gap
                );
            }
            for b in &report.comparisons {
                println!("kappa={}: mdp minimal within 2 se: {}", b.kappa, b.mdp_is_minimal);
            }
            println!("wrote reports under {} ({})", out_dir.display(), rep.display());
            Ok(exit_codes::OK)
        }
        Command::Validate => {
            let report = workflows::validate(&config)?;
            for suite in &report.report.suites {
                println!("{}: {}", suite.name, if suite.passed { "PASS" } else { "FAIL" });
                if !suite.passed {
                    for check in suite.checks.iter().filter(|c| !c.passed) {
                        println!(
                            "  FAIL {} (measured {:.6e}, bound {:.6e})",
                            check.label, check.measured, check.bound
                        );
                    }
                }
            }
            write(&out_dir, "validate_report.json", &json(&report))?;
            if report.report.passed {
                println!("all suites passed");
                Ok(exit_codes::OK)
            } else {
                println!("property suites FAILED");
                Ok(exit_codes::SUITE_FAILURE)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit_codes::OK,
                _ => exit_codes::VALIDATION,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
