//! Network-based interactive-system sandbox.
//!
//! Continuous states, discrete user actions: the system policy is a diagonal
//! Gaussian over next states, the user policy a categorical over actions, and
//! the true reward either a handcrafted quadratic or a frozen random network.
//! Everything is trained from scratch: multi-layer perceptrons with manual
//! backprop and Adam, clipped-surrogate PPO with generalized advantage
//! estimation, adversarial reward recovery, and KL-regularized optimization
//! of the system policy in the role-swapped MDP.

pub mod airl;
pub mod env;
pub mod error;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod sandbox;
pub mod system;

pub use error::NeuralError;
pub use mlp::{Activation, Adam, Init, Mlp, MlpGrads};
pub use policy::{CategoricalPolicy, GaussianPolicy};
pub use system::{NeuralSystem, TrueReward};
