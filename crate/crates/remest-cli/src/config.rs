//! Run configuration: a single JSON file, with command-line overrides
//! applied afterwards. Every report embeds the fully resolved form.

use remest::error::{Error, Result};
use remest::lin_gauss::{SystemModel, SystemModelRaw};
use remest::mdp_solver::MdpConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The system model either inline or as a path to a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Inline(SystemModelRaw),
    Path(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSection {
    #[serde(rename = "M")]
    pub max_elapsed: usize,
    pub zeta: f64,
    pub delta_max: f64,
    pub alpha: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Steps per episode.
    #[serde(rename = "T", default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    /// Steps used for communication-rate estimation.
    #[serde(default = "default_rate_steps")]
    pub rate_steps: usize,
}

fn default_steps() -> usize {
    400
}
fn default_runs() -> usize {
    500
}
fn default_seed() -> u64 {
    0x5eed_2024
}
fn default_rate_steps() -> usize {
    120_000
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            steps: default_steps(),
            runs: default_runs(),
            master_seed: default_seed(),
            rate_steps: default_rate_steps(),
        }
    }
}

fn default_alpha_schedule() -> Vec<f64> {
    vec![0.99, 0.995, 0.999, 0.9995]
}

fn default_fixed_thresholds() -> Vec<f64> {
    vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5]
}

fn default_out_dir() -> String {
    "out".to_string()
}

/// Top-level configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSource,
    pub mdp: MdpSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    /// Transmission prices the workflows sweep; defaults to [mdp.kappa].
    #[serde(default)]
    pub kappa_grid: Vec<f64>,
    #[serde(default = "default_alpha_schedule")]
    pub alpha_schedule: Vec<f64>,
    /// Fixed-threshold baselines for the policy comparison.
    #[serde(default = "default_fixed_thresholds")]
    pub fixed_thresholds: Vec<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: RunConfig = serde_json::from_str(&text)?;
        // Resolve a relative system path against the config's directory.
        if let SystemSource::Path(p) = &config.system {
            let sys_path = Path::new(p);
            if sys_path.is_relative() {
                if let Some(dir) = path.parent() {
                    config.system = SystemSource::Path(dir.join(sys_path).display().to_string());
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Structural validation; numeric validation happens in the library
    /// constructors.
    pub fn validate(&self) -> Result<()> {
        if self.mdp.max_elapsed < 1 {
            return Err(Error::validation("mdp.M must be at least 1"));
        }
        if !(self.mdp.zeta > 0.0 && self.mdp.zeta.is_finite()) {
            return Err(Error::validation("mdp.zeta must be positive"));
        }
        if !(self.mdp.delta_max >= self.mdp.zeta) {
            return Err(Error::validation("mdp.delta_max must be at least zeta"));
        }
        if !(0.0..1.0).contains(&self.mdp.alpha) {
            return Err(Error::validation("mdp.alpha must lie in [0, 1)"));
        }
        if !(self.mdp.kappa >= 0.0) {
            return Err(Error::validation("mdp.kappa must be nonnegative"));
        }
        if self.simulation.rate_steps == 0 {
            return Err(Error::validation("simulation.rate_steps must be at least 1"));
        }
        if self.kappa_grid.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::validation("kappa_grid entries must be nonnegative"));
        }
        if self.alpha_schedule.is_empty() {
            return Err(Error::validation("alpha_schedule must be non-empty"));
        }
        if self.alpha_schedule.iter().any(|a| !(0.0..1.0).contains(a)) {
            return Err(Error::validation("alpha_schedule entries must lie in [0, 1)"));
        }
        if self.alpha_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("alpha_schedule must be strictly ascending"));
        }
        if self.fixed_thresholds.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::validation("fixed_thresholds entries must be positive"));
        }
        if self.simulation.runs == 0 {
            return Err(Error::validation("simulation.runs must be at least 1"));
        }
        if self.simulation.steps == 0 {
            return Err(Error::validation("simulation.T must be at least 1"));
        }
        Ok(())
    }

    /// Load and validate the system model.
    pub fn system_model(&self) -> Result<SystemModel> {
        match &self.system {
            SystemSource::Inline(raw) => SystemModel::try_from(raw.clone()),
            SystemSource::Path(p) => {
                let text = std::fs::read_to_string(p)?;
                SystemModel::from_json(&text)
            }
        }
    }

    /// The library MDP configuration for a given kappa; dof comes from the
    /// system's output rank.
    pub fn mdp_config(&self, model: &SystemModel, kappa: f64) -> MdpConfig {
        MdpConfig {
            max_elapsed: self.mdp.max_elapsed,
            zeta: self.mdp.zeta,
            delta_max: self.mdp.delta_max,
            alpha: self.mdp.alpha,
            kappa,
            dof: model.output_rank(),
        }
    }

    /// Kappa grid with the default fallback applied.
    pub fn kappas(&self) -> Vec<f64> {
        if self.kappa_grid.is_empty() {
            vec![self.mdp.kappa]
        } else {
            self.kappa_grid.clone()
        }
    }
}

/// A solved policy written by `solve` and consumed by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub kappa: f64,
    pub alpha: f64,
    pub mdp: MdpSection,
    pub thresholds_by_tau_plus: Vec<f64>,
    pub j_star_origin: f64,
    pub lambda_hat: f64,
    pub bellman_residual: f64,
    pub seed: u64,
}

impl PolicyFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: PolicyFile = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds_by_tau_plus.len() != self.mdp.max_elapsed + 1 {
            return Err(Error::validation(format!(
                "policy has {} thresholds but M = {} needs {}",
                self.thresholds_by_tau_plus.len(),
                self.mdp.max_elapsed,
                self.mdp.max_elapsed + 1
            )));
        }
        if self.thresholds_by_tau_plus.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::validation("policy thresholds must be positive"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::validation("policy alpha must lie in [0, 1)"));
        }
        Ok(())
    }
}
