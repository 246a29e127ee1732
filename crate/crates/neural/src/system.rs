//! The network-based interactive system.

use ndarray::Array1;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{NeuralError, Result};
use crate::mlp::{Activation, Init, Mlp};
use crate::policy::{CategoricalPolicy, GaussianPolicy};

/// Ground-truth user reward over continuous states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrueReward {
    /// r(s) = ||s||^2 / dim.
    Handcrafted { dim: usize },
    /// A frozen uniformly-initialized network; patternless by construction.
    RandomNet(Mlp),
}

impl TrueReward {
    pub fn eval(&self, state: &Array1<f64>) -> f64 {
        match self {
            TrueReward::Handcrafted { dim } => state.dot(state) / *dim as f64,
            TrueReward::RandomNet(net) => net.forward(state)[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    Handcrafted,
    Random,
}

/// State dimension, action count, and the three networks of the world:
/// system policy (composite observation to next-state Gaussian), user policy
/// (state to action logits), and the true reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralSystem {
    pub state_dim: usize,
    pub n_actions: usize,
    pub system_policy: GaussianPolicy,
    pub user_policy: CategoricalPolicy,
    pub true_reward: TrueReward,
}

pub const HIDDEN: usize = 64;

impl NeuralSystem {
    /// Fresh world: Xavier-initialized policies, seed-deterministic.
    pub fn new(state_dim: usize, n_actions: usize, reward: RewardKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let system_net = Mlp::new(
            &[state_dim + n_actions, HIDDEN, HIDDEN, 2 * state_dim],
            Activation::Tanh,
            Init::Xavier,
            &mut rng,
        );
        let user_net = Mlp::new(
            &[state_dim, HIDDEN, HIDDEN, n_actions],
            Activation::Tanh,
            Init::Xavier,
            &mut rng,
        );
        let true_reward = match reward {
            RewardKind::Handcrafted => TrueReward::Handcrafted { dim: state_dim },
            RewardKind::Random => TrueReward::RandomNet(Mlp::new(
                &[state_dim, HIDDEN, HIDDEN, 1],
                Activation::Tanh,
                Init::Uniform {
                    low: -1.0,
                    high: 1.0,
                },
                &mut rng,
            )),
        };
        Self {
            state_dim,
            n_actions,
            system_policy: GaussianPolicy::new(system_net, state_dim),
            user_policy: CategoricalPolicy::new(user_net),
            true_reward,
        }
    }

    /// Initial states are standard normal in each dimension.
    pub fn sample_initial_state<R: rand::Rng>(&self, rng: &mut R) -> Array1<f64> {
        Array1::from_shape_fn(self.state_dim, |_| rng.sample(rand_distr::StandardNormal))
    }
}

/// On-disk checkpoint: all parameters plus a fingerprint of the generating
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: u64,
    pub system: NeuralSystem,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, self)
            .map_err(|e| NeuralError::Format(format!("writing checkpoint: {e}")))?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Self = serde_json::from_reader(file)
            .map_err(|e| NeuralError::Format(format!("reading checkpoint: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn handcrafted_reward_values() {
        let r = TrueReward::Handcrafted { dim: 50 };
        assert_abs_diff_eq!(r.eval(&Array1::zeros(50)), 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(r.eval(&Array1::ones(50)), 1.0, epsilon = 1e-12);
        let r3 = TrueReward::Handcrafted { dim: 3 };
        assert_abs_diff_eq!(r3.eval(&array![1.0, 2.0, 2.0]), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn random_reward_is_seed_deterministic() {
        let a = NeuralSystem::new(6, 4, RewardKind::Random, 42);
        let b = NeuralSystem::new(6, 4, RewardKind::Random, 42);
        let s = array![0.1, -0.4, 0.9, 0.0, 0.3, -1.2];
        assert_eq!(a.true_reward.eval(&s).to_bits(), b.true_reward.eval(&s).to_bits());
        let c = NeuralSystem::new(6, 4, RewardKind::Random, 43);
        assert_ne!(a.true_reward.eval(&s).to_bits(), c.true_reward.eval(&s).to_bits());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("ckpt_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("system.json");
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: 0xfeed,
            system: NeuralSystem::new(4, 3, RewardKind::Handcrafted, 7),
        };
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        std::fs::remove_dir_all(&dir).ok();
    }
}
