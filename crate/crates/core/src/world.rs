//! Randomized construction of tabular worlds.
//!
//! A world is a `TabularSystem` plus a true reward: connectivity is sampled
//! once per seed and then frozen for the life of the experiment, transition
//! rows and D0 are uniform points on their simplices, and the reward assigns
//! 1 to a fixed fraction of states. Each component draws from its own seed
//! stream, so regenerating any one of them leaves the others bit-identical.

use ndarray::{Array1, Array3};
use rand::seq::index::sample as sample_without_replacement;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::mdp::{RewardModel, TabularSystem};
use crate::rng::{stream, stream_rng};

/// Parameters of a sampled world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_states: usize,
    pub n_actions: usize,
    /// Number of allowed next states per (state, action) pair.
    pub connection_factor: usize,
    /// Fraction of states that carry reward 1.
    pub reward_fraction: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_states: 64,
            n_actions: 4,
            connection_factor: 8,
            reward_fraction: 0.25,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(CoreError::InvalidConfig(
                "state and action counts must be positive".into(),
            ));
        }
        if self.connection_factor == 0 || self.connection_factor > self.n_states {
            return Err(CoreError::InvalidConfig(format!(
                "connection factor {} outside [1, {}]",
                self.connection_factor, self.n_states
            )));
        }
        if !(self.reward_fraction > 0.0 && self.reward_fraction < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "reward fraction {} outside (0, 1)",
                self.reward_fraction
            )));
        }
        Ok(())
    }
}

/// Samples a system: cf distinct next states per (s, a) drawn uniformly
/// without replacement (self-loops allowed), transition rows and D0 uniform
/// on their simplices. Connectivity depends only on (seed, n_states,
/// n_actions, cf) through its dedicated stream.
pub fn sample_system(config: &WorldConfig) -> Result<TabularSystem> {
    config.validate()?;
    let n = config.n_states;
    let cf = config.connection_factor;

    let mut conn_rng = stream_rng(config.seed, stream::CONNECTIVITY);
    let mut connectivity = Vec::with_capacity(n);
    for _ in 0..n {
        let mut per_action = Vec::with_capacity(config.n_actions);
        for _ in 0..config.n_actions {
            let mut targets = sample_without_replacement(&mut conn_rng, n, cf).into_vec();
            targets.sort_unstable();
            per_action.push(targets);
        }
        connectivity.push(per_action);
    }

    let mut trans_rng = stream_rng(config.seed, stream::TRANSITION);
    let mut transition = Array3::zeros((n, config.n_actions, n));
    for (s, per_action) in connectivity.iter().enumerate() {
        for (a, targets) in per_action.iter().enumerate() {
            let row = uniform_simplex(cf, &mut trans_rng);
            for (&target, &p) in targets.iter().zip(row.iter()) {
                transition[[s, a, target]] = p;
            }
        }
    }

    let mut d0_rng = stream_rng(config.seed, stream::INITIAL_DIST);
    let initial_dist = Array1::from_vec(uniform_simplex(n, &mut d0_rng));

    TabularSystem::new(n, config.n_actions, connectivity, transition, initial_dist)
}

/// Samples the true reward: exactly `round(reward_fraction * n_states)`
/// states get weight 1, chosen uniformly without replacement, the rest 0.
pub fn sample_reward(config: &WorldConfig) -> Result<RewardModel> {
    config.validate()?;
    let n_rewarded = ((config.reward_fraction * config.n_states as f64).round() as usize)
        .clamp(1, config.n_states - 1);
    let mut rng = stream_rng(config.seed, stream::REWARD);
    let chosen = sample_without_replacement(&mut rng, config.n_states, n_rewarded);
    let mut weights = Array1::zeros(config.n_states);
    for s in chosen {
        weights[s] = 1.0;
    }
    RewardModel::new(weights)
}

/// Uniform point on the (len-1)-simplex: normalized unit exponentials,
/// equivalently a symmetric Dirichlet with concentration 1.
fn uniform_simplex<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..len)
        .map(|_| {
            let u: f64 = rng.random();
            // u in [0, 1); 1 - u in (0, 1] keeps the log finite.
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= total;
    }
    draws
}

/// A sampled world plus its true reward, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub version: u32,
    pub config: WorldConfig,
    pub system: TabularSystem,
    pub reward_weights: Vec<f64>,
}

pub const WORLD_FILE_VERSION: u32 = 1;

impl WorldFile {
    pub fn new(config: WorldConfig, system: TabularSystem, reward: &RewardModel) -> Self {
        Self {
            version: WORLD_FILE_VERSION,
            config,
            system,
            reward_weights: reward.weights().to_vec(),
        }
    }

    pub fn reward(&self) -> Result<RewardModel> {
        RewardModel::new(Array1::from_vec(self.reward_weights.clone()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut file, self)
            .map_err(|e| CoreError::Format(format!("writing world file: {e}")))?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let world: Self = serde_json::from_reader(file)
            .map_err(|e| CoreError::Format(format!("reading world file: {e}")))?;
        if world.version != WORLD_FILE_VERSION {
            return Err(CoreError::Format(format!(
                "unsupported world file version {}",
                world.version
            )));
        }
        world.system.validate()?;
        Ok(world)
    }
}

/// One recovered-reward record, written alongside the world file so every
/// experiment iteration is auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredRewardRecord {
    pub iteration: usize,
    pub method: String,
    pub hyperparams: String,
    /// FNV-1a fingerprint of the serialized trajectory log the weights came from.
    pub log_hash: u64,
    pub theta: Vec<f64>,
}

/// Appends recovered-reward records as JSON lines.
pub fn append_reward_records(path: &Path, records: &[RecoveredRewardRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(
        std::fs::OpenOptions::new().create(true).append(true).open(path)?,
    );
    for record in records {
        serde_json::to_writer(&mut file, record)
            .map_err(|e| CoreError::Format(format!("writing reward record: {e}")))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_reward_records(path: &Path) -> Result<Vec<RecoveredRewardRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CoreError::Format(format!("reading reward record: {e}")))?,
        );
    }
    Ok(out)
}
