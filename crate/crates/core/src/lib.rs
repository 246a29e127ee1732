//! Tabular interactive-system simulator.
//!
//! An interactive system is modeled as the environment of a finite MDP whose
//! agent is the user: states are system responses, actions are user moves, and
//! the transition distribution is the one thing the system designer may change.
//! This crate provides the finite-MDP core (policy evaluation, soft value
//! iteration, brute-force oracles), randomized world generation, simulated
//! user-interaction logs, reward recovery from those logs (MaxEnt IRL and
//! scored-trajectory regression), and the optimizer that improves the
//! transition distribution by solving the role-swapped MDP.

pub mod behavior;
pub mod error;
pub mod irl;
pub mod iso;
pub mod mdp;
pub mod oracle;
pub mod rng;
pub mod world;

pub use error::CoreError;
pub use mdp::{Policy, RewardModel, TabularSystem, Trajectory};
pub use world::WorldConfig;
