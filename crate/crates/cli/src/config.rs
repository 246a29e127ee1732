//! Experiment configuration: a single TOML file, fully validated before any
//! compute, round-tripping losslessly through its file format.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use iso_core::irl::MaxEntParams;
use iso_core::iso::{BehaviorType, IrlMethod, NoiseKind, RunParams};
use iso_core::world::WorldConfig;
use iso_neural::sandbox::{NeuralConfig, Setup};
use iso_neural::system::RewardKind;

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tabular,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Names the output files under `output`.
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub replicas: usize,
    pub iterations: usize,
    /// Output directory for results, summaries, and provenance records.
    pub output: PathBuf,
    /// Worker-pool size; `None` defers to the ISO_WORKERS variable, then to
    /// the machine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabular: Option<TabularSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neural: Option<NeuralSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSection {
    #[serde(default = "defaults::n_states")]
    pub n_states: usize,
    #[serde(default = "defaults::n_actions_tabular")]
    pub n_actions: usize,
    pub connection_factor: usize,
    #[serde(default = "defaults::reward_fraction")]
    pub reward_fraction: f64,
    /// One of: irl-labelled | optimal | suboptimal.
    pub behavior: String,
    #[serde(default)]
    pub noise_factor: f64,
    /// mb | nb; only read for suboptimal behavior.
    #[serde(default = "defaults::noise_kind")]
    pub noise_kind: String,
    /// maxent | dm-irl.
    pub irl_method: String,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::log_size")]
    pub log_size: usize,
    #[serde(default = "defaults::len_min")]
    pub len_min: usize,
    #[serde(default = "defaults::len_max")]
    pub len_max: usize,
    #[serde(default = "defaults::maxent_learning_rate")]
    pub maxent_learning_rate: f64,
    #[serde(default = "defaults::maxent_iterations")]
    pub maxent_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralSection {
    #[serde(default = "defaults::state_dim")]
    pub state_dim: usize,
    #[serde(default = "defaults::n_actions_neural")]
    pub n_actions: usize,
    /// handcrafted | random.
    #[serde(default = "defaults::reward")]
    pub reward: String,
    /// oracle-oracle | airl-oracle | airl-airl.
    pub setup: String,
    pub lambda: f64,
    #[serde(default = "defaults::expert_episodes")]
    pub expert_episodes: usize,
    #[serde(default = "defaults::eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "defaults::ppo_updates")]
    pub user_ppo_updates: usize,
    #[serde(default = "defaults::ppo_updates")]
    pub system_ppo_updates: usize,
    #[serde(default = "defaults::airl_rounds")]
    pub airl_rounds: usize,
}

mod defaults {
    pub fn n_states() -> usize {
        64
    }
    pub fn n_actions_tabular() -> usize {
        4
    }
    pub fn reward_fraction() -> f64 {
        0.25
    }
    pub fn noise_kind() -> String {
        "mb".into()
    }
    pub fn gamma() -> f64 {
        0.9
    }
    pub fn log_size() -> usize {
        2_000
    }
    pub fn len_min() -> usize {
        30
    }
    pub fn len_max() -> usize {
        40
    }
    pub fn maxent_learning_rate() -> f64 {
        0.05
    }
    pub fn maxent_iterations() -> usize {
        300
    }
    pub fn state_dim() -> usize {
        10
    }
    pub fn n_actions_neural() -> usize {
        10
    }
    pub fn reward() -> String {
        "handcrafted".into()
    }
    pub fn expert_episodes() -> usize {
        2_000
    }
    pub fn eval_episodes() -> usize {
        1_000
    }
    pub fn ppo_updates() -> usize {
        25
    }
    pub fn airl_rounds() -> usize {
        20
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| HarnessError::Format(format!("parsing {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Content fingerprint used for resume checks and run identifiers.
    pub fn fingerprint(&self) -> u64 {
        iso_core::rng::fnv1a64(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || self
                .name
                .chars()
                .any(|c| !c.is_ascii_alphanumeric() && !"-_.".contains(c))
        {
            return Err(HarnessError::InvalidConfig(format!(
                "name {:?} must be non-empty and filesystem-safe",
                self.name
            )));
        }
        if self.replicas == 0 {
            return Err(HarnessError::InvalidConfig("replicas must be positive".into()));
        }
        match self.mode {
            Mode::Tabular => {
                let section = self.tabular.as_ref().ok_or_else(|| {
                    HarnessError::InvalidConfig("tabular mode needs a [tabular] section".into())
                })?;
                section.behavior_type()?;
                section.irl()?;
                self.world_config(0)?.validate()?;
                if !(section.gamma > 0.0 && section.gamma < 1.0) {
                    return Err(HarnessError::InvalidConfig(format!(
                        "gamma {} outside (0, 1)",
                        section.gamma
                    )));
                }
                if section.len_min == 0 || section.len_min > section.len_max {
                    return Err(HarnessError::InvalidConfig(format!(
                        "bad trajectory length range [{}, {}]",
                        section.len_min, section.len_max
                    )));
                }
            }
            Mode::Neural => {
                let section = self.neural.as_ref().ok_or_else(|| {
                    HarnessError::InvalidConfig("neural mode needs a [neural] section".into())
                })?;
                section.setup()?;
                section.reward_kind()?;
                if section.lambda < 0.0 {
                    return Err(HarnessError::InvalidConfig("lambda must be >= 0".into()));
                }
                if section.state_dim == 0 || section.n_actions == 0 {
                    return Err(HarnessError::InvalidConfig(
                        "state_dim and n_actions must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn world_config(&self, replica_seed: u64) -> Result<WorldConfig> {
        let section = self.tabular.as_ref().ok_or_else(|| {
            HarnessError::InvalidConfig("tabular parameters missing".into())
        })?;
        Ok(WorldConfig {
            n_states: section.n_states,
            n_actions: section.n_actions,
            connection_factor: section.connection_factor,
            reward_fraction: section.reward_fraction,
            seed: replica_seed,
        })
    }

    pub fn run_params(&self) -> Result<RunParams> {
        let section = self.tabular.as_ref().ok_or_else(|| {
            HarnessError::InvalidConfig("tabular parameters missing".into())
        })?;
        Ok(RunParams {
            gamma: section.gamma,
            log_size: section.log_size,
            len_min: section.len_min,
            len_max: section.len_max,
            maxent: MaxEntParams {
                horizon: section.len_max,
                learning_rate: section.maxent_learning_rate,
                iterations: section.maxent_iterations,
            },
        })
    }

    pub fn neural_config(&self, replica_seed: u64) -> Result<NeuralConfig> {
        let section = self.neural.as_ref().ok_or_else(|| {
            HarnessError::InvalidConfig("neural parameters missing".into())
        })?;
        let mut config = NeuralConfig {
            state_dim: section.state_dim,
            n_actions: section.n_actions,
            reward: section.reward_kind()?,
            setup: section.setup()?,
            lambda: section.lambda,
            iterations: self.iterations,
            expert_episodes: section.expert_episodes,
            eval_episodes: section.eval_episodes,
            seed: replica_seed,
            ..NeuralConfig::default()
        };
        config.user_ppo.updates = section.user_ppo_updates;
        config.system_ppo.updates = section.system_ppo_updates;
        config.airl.rounds = section.airl_rounds;
        Ok(config)
    }
}

impl TabularSection {
    pub fn behavior_type(&self) -> Result<BehaviorType> {
        match self.behavior.as_str() {
            "irl-labelled" => Ok(BehaviorType::IrlLabelled),
            "optimal" => Ok(BehaviorType::Optimal),
            "suboptimal" => {
                if !(0.0..=1.0).contains(&self.noise_factor) {
                    return Err(HarnessError::InvalidConfig(format!(
                        "noise factor {} outside [0, 1]",
                        self.noise_factor
                    )));
                }
                let kind = match self.noise_kind.as_str() {
                    "mb" => NoiseKind::MixedBehaviors,
                    "nb" => NoiseKind::NoisyActions,
                    other => {
                        return Err(HarnessError::InvalidConfig(format!(
                            "unknown noise kind {other:?} (expected mb | nb)"
                        )))
                    }
                };
                Ok(BehaviorType::SubOptimal {
                    noise_factor: self.noise_factor,
                    kind,
                })
            }
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown behavior {other:?} (expected irl-labelled | optimal | suboptimal)"
            ))),
        }
    }

    pub fn irl(&self) -> Result<IrlMethod> {
        match self.irl_method.as_str() {
            "maxent" => Ok(IrlMethod::MaxEnt),
            "dm-irl" => Ok(IrlMethod::DmIrl),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown irl method {other:?} (expected maxent | dm-irl)"
            ))),
        }
    }
}

impl NeuralSection {
    pub fn setup(&self) -> Result<Setup> {
        match self.setup.as_str() {
            "oracle-oracle" => Ok(Setup::OracleOracle),
            "airl-oracle" => Ok(Setup::AirlOracle),
            "airl-airl" => Ok(Setup::AirlAirl),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown setup {other:?} (expected oracle-oracle | airl-oracle | airl-airl)"
            ))),
        }
    }

    pub fn reward_kind(&self) -> Result<RewardKind> {
        match self.reward.as_str() {
            "handcrafted" => Ok(RewardKind::Handcrafted),
            "random" => Ok(RewardKind::Random),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown reward {other:?} (expected handcrafted | random)"
            ))),
        }
    }
}
