//! Declarative agent configuration.
//!
//! Configs are strict-schema JSON documents; unknown keys are rejected and
//! numeric fields are validated against their documented ranges before any
//! composition happens.

use rlstage_components::{LayerSpec, OptimizerKind, PreprocessorSpec};
use rlstage_core::SpaceSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("config schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("config range: {0}")]
    Range(String),
    #[error("unsupported agent type '{0}'")]
    UnsupportedAgent(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExplorationConfig {
    #[serde(default = "one")]
    pub epsilon_start: f64,
    #[serde(default = "low_eps")]
    pub epsilon_end: f64,
    #[serde(default = "decay_steps")]
    pub decay_steps: u64,
}

fn one() -> f64 {
    1.0
}

fn low_eps() -> f64 {
    0.05
}

fn decay_steps() -> u64 {
    10_000
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig { epsilon_start: 1.0, epsilon_end: 0.05, decay_steps: 10_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub capacity: usize,
    #[serde(default = "alpha_default")]
    pub alpha: f64,
    #[serde(default = "beta_default")]
    pub beta: f64,
}

fn alpha_default() -> f64 {
    0.6
}

fn beta_default() -> f64 {
    0.4
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct UpdateConfig {
    pub batch_size: usize,
    pub gamma: f64,
    #[serde(default = "yes")]
    pub double_q: bool,
    #[serde(default = "n_step_default")]
    pub n_step: usize,
    pub learning_rate: f64,
    #[serde(default = "adam")]
    pub optimizer: OptimizerKind,
    #[serde(default = "sync_interval")]
    pub target_sync_interval: u64,
    #[serde(default = "update_interval")]
    pub update_interval: u64,
    #[serde(default = "one_replica")]
    pub replica_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub huber_delta: Option<f64>,
}

fn yes() -> bool {
    true
}

fn n_step_default() -> usize {
    3
}

fn adam() -> OptimizerKind {
    OptimizerKind::Adam
}

fn sync_interval() -> u64 {
    200
}

fn update_interval() -> u64 {
    4
}

fn one_replica() -> usize {
    1
}

/// One device-map entry; `target` picks ops, variables, or both.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DeviceRule {
    pub scope: String,
    pub device: String,
    #[serde(default)]
    pub target: DeviceTarget,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum DeviceTarget {
    #[default]
    Both,
    Ops,
    Vars,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Algorithm selector; "dqn" is the built-in.
    pub agent: String,
    pub state_space: SpaceSpec,
    pub action_space: SpaceSpec,
    pub network: Vec<LayerSpec>,
    #[serde(default)]
    pub preprocessors: Vec<PreprocessorSpec>,
    #[serde(default = "yes")]
    pub dueling: bool,
    #[serde(default)]
    pub exploration: ExplorationConfig,
    pub memory: MemoryConfig,
    pub update: UpdateConfig,
    #[serde(default)]
    pub devices: Vec<DeviceRule>,
    #[serde(default)]
    pub seed: u64,
    /// Workers compute TD-error priorities for fresh samples instead of the
    /// max-priority heuristic (off by default).
    #[serde(default)]
    pub worker_td_priority: bool,
}

impl AgentConfig {
    pub fn from_json(text: &str) -> Result<AgentConfig, ConfigError> {
        let cfg: AgentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agent != "dqn" {
            return Err(ConfigError::UnsupportedAgent(self.agent.clone()));
        }
        let range = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Range(what.to_string()))
            }
        };
        range(
            (0.0..=1.0).contains(&self.update.gamma),
            &format!("gamma {} outside [0, 1]", self.update.gamma),
        )?;
        range(self.update.batch_size >= 1, "batch_size must be positive")?;
        range(self.update.n_step >= 1, "n_step must be positive")?;
        range(self.update.learning_rate > 0.0, "learning_rate must be positive")?;
        range(self.update.target_sync_interval >= 1, "target_sync_interval must be positive")?;
        range(self.update.update_interval >= 1, "update_interval must be positive")?;
        range(self.update.replica_count >= 1, "replica_count must be positive")?;
        range(
            self.update.batch_size % self.update.replica_count == 0,
            &format!(
                "batch_size {} not divisible by replica_count {}",
                self.update.batch_size, self.update.replica_count
            ),
        )?;
        if let Some(d) = self.update.huber_delta {
            range(d > 0.0, "huber_delta must be positive")?;
        }
        range(self.memory.capacity >= 1, "memory capacity must be positive")?;
        range(self.memory.alpha >= 0.0, "alpha must be nonnegative")?;
        range(self.memory.beta >= 0.0, "beta must be nonnegative")?;
        range(
            (0.0..=1.0).contains(&self.exploration.epsilon_start),
            "epsilon_start outside [0, 1]",
        )?;
        range(
            (0.0..=1.0).contains(&self.exploration.epsilon_end),
            "epsilon_end outside [0, 1]",
        )?;
        range(self.exploration.decay_steps >= 1, "decay_steps must be positive")?;
        Ok(())
    }

    /// Linear epsilon decay on the agent timestep.
    pub fn epsilon_at(&self, timestep: u64) -> f64 {
        let e = &self.exploration;
        let frac = (timestep as f64 / e.decay_steps as f64).min(1.0);
        e.epsilon_start + (e.epsilon_end - e.epsilon_start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn minimal_json() -> String {
        r#"{
            "agent": "dqn",
            "state_space": {"type": "float_box", "shape": [4]},
            "action_space": {"type": "int_box", "num_categories": 2},
            "network": [{"units": 16, "activation": "relu"}, {"units": 16, "activation": "relu"}],
            "memory": {"capacity": 256},
            "update": {"batch_size": 16, "gamma": 0.99, "learning_rate": 0.001}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = AgentConfig::from_json(&minimal_json()).unwrap();
        assert!(cfg.dueling);
        assert!(cfg.update.double_q);
        assert_eq!(cfg.update.n_step, 3);
        assert_eq!(cfg.memory.alpha, 0.6);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = minimal_json().replace("\"agent\"", "\"mystery\": 1, \"agent\"");
        assert!(matches!(AgentConfig::from_json(&bad), Err(ConfigError::Schema(_))));
    }

    #[test]
    fn out_of_range_gamma_rejected() {
        let bad = minimal_json().replace("\"gamma\": 0.99", "\"gamma\": 1.5");
        assert!(matches!(AgentConfig::from_json(&bad), Err(ConfigError::Range(_))));
    }

    #[test]
    fn epsilon_decays_linearly() {
        let cfg = AgentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.epsilon_at(0), 1.0);
        let mid = cfg.epsilon_at(5_000);
        assert!((mid - 0.525).abs() < 1e-12);
        assert!((cfg.epsilon_at(1_000_000) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn indivisible_replicas_rejected() {
        let bad = minimal_json().replace(
            "\"learning_rate\": 0.001",
            "\"learning_rate\": 0.001, \"replica_count\": 3",
        );
        assert!(matches!(AgentConfig::from_json(&bad), Err(ConfigError::Range(_))));
    }
}
