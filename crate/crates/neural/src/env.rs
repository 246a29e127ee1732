//! Episode environments for the two optimization phases.
//!
//! Episodes never terminate early; they are cut at the horizon (40 steps by
//! default). The per-step reward is paid on the state the step departs from,
//! so an episode's undiscounted return is the sum of the reward over the
//! first `horizon` states visited.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::policy::{composite_obs, CategoricalPolicy, GaussianPolicy, StochasticPolicy};
use crate::system::TrueReward;

pub const EPISODE_HORIZON: usize = 40;

pub trait Environment {
    type Action: Clone;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Array1<f64>;
    fn step(&mut self, action: &Self::Action, rng: &mut ChaCha8Rng) -> (Array1<f64>, f64);
    fn obs_dim(&self) -> usize;
    fn horizon(&self) -> usize {
        EPISODE_HORIZON
    }
}

/// Reward source for user-side training: either the true reward or a learned
/// state-only network.
#[derive(Clone)]
pub enum RewardFn<'a> {
    True(&'a TrueReward),
    Net(&'a crate::mlp::Mlp),
}

impl RewardFn<'_> {
    pub fn eval(&self, state: &Array1<f64>) -> f64 {
        match self {
            RewardFn::True(r) => r.eval(state),
            RewardFn::Net(net) => net.forward(state)[0],
        }
    }
}

/// The original MDP from the user's seat: the frozen system policy supplies
/// the dynamics, observations are raw states, actions are discrete.
pub struct UserEnv<'a> {
    pub system_policy: &'a GaussianPolicy,
    pub reward: RewardFn<'a>,
    pub state_dim: usize,
    pub n_actions: usize,
    state: Array1<f64>,
}

impl<'a> UserEnv<'a> {
    pub fn new(
        system_policy: &'a GaussianPolicy,
        reward: RewardFn<'a>,
        state_dim: usize,
        n_actions: usize,
    ) -> Self {
        Self {
            system_policy,
            reward,
            state_dim,
            n_actions,
            state: Array1::zeros(state_dim),
        }
    }
}

impl Environment for UserEnv<'_> {
    type Action = usize;

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        self.state = Array1::from_shape_fn(self.state_dim, |_| rng.sample(rand_distr::StandardNormal));
        self.state.clone()
    }

    fn step(&mut self, action: &usize, rng: &mut ChaCha8Rng) -> (Array1<f64>, f64) {
        let reward = self.reward.eval(&self.state);
        let obs = composite_obs(&self.state, *action, self.n_actions);
        let (next, _) = self.system_policy.act(&obs, rng);
        self.state = next;
        (self.state.clone(), reward)
    }

    fn obs_dim(&self) -> usize {
        self.state_dim
    }
}

/// The role-swapped MDP from the system's seat: observations are composite
/// `[state, onehot(action)]`, the system's action is the next state itself,
/// and the frozen user policy supplies the swapped dynamics.
pub struct SystemEnv<'a> {
    pub user_policy: &'a CategoricalPolicy,
    pub reward: RewardFn<'a>,
    pub state_dim: usize,
    pub n_actions: usize,
    state: Array1<f64>,
    action: usize,
}

impl<'a> SystemEnv<'a> {
    pub fn new(
        user_policy: &'a CategoricalPolicy,
        reward: RewardFn<'a>,
        state_dim: usize,
        n_actions: usize,
    ) -> Self {
        Self {
            user_policy,
            reward,
            state_dim,
            n_actions,
            state: Array1::zeros(state_dim),
            action: 0,
        }
    }

    fn observation(&self) -> Array1<f64> {
        composite_obs(&self.state, self.action, self.n_actions)
    }
}

impl Environment for SystemEnv<'_> {
    type Action = Array1<f64>;

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        self.state = Array1::from_shape_fn(self.state_dim, |_| rng.sample(rand_distr::StandardNormal));
        let (action, _) = self.user_policy.act(&self.state, rng);
        self.action = action;
        self.observation()
    }

    fn step(&mut self, delivered: &Array1<f64>, rng: &mut ChaCha8Rng) -> (Array1<f64>, f64) {
        // r+((s, a)) = r(s), paid on departure like the original MDP.
        let reward = self.reward.eval(&self.state);
        self.state = delivered.clone();
        let (action, _) = self.user_policy.act(&self.state, rng);
        self.action = action;
        (self.observation(), reward)
    }

    fn obs_dim(&self) -> usize {
        self.state_dim + self.n_actions
    }
}

/// An episode rolled out by a user policy: `states.len() == actions.len() + 1`
/// unless truncated exactly at the horizon, where the trailing state is kept
/// for bootstrapping.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub states: Vec<Array1<f64>>,
    pub actions: Vec<usize>,
}

impl EpisodeTrace {
    /// Consecutive (s, a, s') transitions.
    pub fn transitions(&self) -> impl Iterator<Item = (&Array1<f64>, usize, &Array1<f64>)> {
        self.actions
            .iter()
            .enumerate()
            .map(|(t, &a)| (&self.states[t], a, &self.states[t + 1]))
    }

    pub fn undiscounted_return(&self, reward: &RewardFn<'_>) -> f64 {
        self.states[..self.actions.len()]
            .iter()
            .map(|s| reward.eval(s))
            .sum()
    }
}

/// Rolls out `count` episodes of exactly `horizon` steps with a user policy
/// on a frozen system.
pub fn rollout_user_episodes(
    system_policy: &GaussianPolicy,
    user_policy: &CategoricalPolicy,
    state_dim: usize,
    n_actions: usize,
    count: usize,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<EpisodeTrace> {
    let mut episodes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut state: Array1<f64> =
            Array1::from_shape_fn(state_dim, |_| rng.sample(rand_distr::StandardNormal));
        for _ in 0..horizon {
            let (a, _) = user_policy.act(&state, rng);
            states.push(state.clone());
            actions.push(a);
            let obs = composite_obs(&state, a, n_actions);
            let (next, _) = system_policy.act(&obs, rng);
            state = next;
        }
        states.push(state);
        episodes.push(EpisodeTrace { states, actions });
    }
    episodes
}
