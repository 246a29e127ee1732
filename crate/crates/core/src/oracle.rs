//! Brute-force reference computations.
//!
//! Everything here is deliberately naive: exhaustive enumeration, backward
//! dynamic programming, and plain Monte-Carlo rollouts. Test suites use these
//! as ground truth against the efficient implementations, so none of the
//! functions below may share code with the solvers they check.

use ndarray::Array1;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::mdp::{check_gamma, Policy, RewardModel, TabularSystem, Trajectory};
use crate::rng::stream_rng;

/// Hard cap on exhaustive enumeration size.
pub const ENUMERATION_CAP: usize = 1_000_000;

/// A state path with its bound actions: `actions.len() == states.len() - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Path {
    /// Product of transition probabilities along the path.
    pub fn dynamics_weight(&self, system: &TabularSystem) -> f64 {
        self.actions
            .iter()
            .enumerate()
            .map(|(t, &a)| system.transition_prob(self.states[t], a, self.states[t + 1]))
            .product()
    }

    /// Undiscounted per-state feature (visit) counts.
    pub fn state_counts(&self, n_states: usize) -> Array1<f64> {
        let mut counts = Array1::zeros(n_states);
        for &s in &self.states {
            counts[s] += 1.0;
        }
        counts
    }

    pub fn discounted_return(&self, reward: &RewardModel, gamma: f64) -> f64 {
        self.states
            .iter()
            .enumerate()
            .map(|(t, &s)| gamma.powi(t as i32) * reward.reward(s))
            .sum()
    }
}

/// All dynamics-feasible paths (edges with T > 0) visiting exactly
/// `n_path_states` states, optionally restricted to one start state.
pub fn enumerate_paths(
    system: &TabularSystem,
    n_path_states: usize,
    start: Option<usize>,
) -> Result<Vec<Path>> {
    if n_path_states == 0 {
        return Err(CoreError::InvalidConfig(
            "paths must visit at least one state".into(),
        ));
    }
    let count = count_paths(system, n_path_states, start)?;
    if count > ENUMERATION_CAP as u128 {
        return Err(CoreError::InstanceTooLarge(count as usize, ENUMERATION_CAP));
    }

    let mut out = Vec::with_capacity(count as usize);
    let starts: Vec<usize> = match start {
        Some(s) => vec![s],
        None => (0..system.n_states()).collect(),
    };
    for s0 in starts {
        let mut path = Path {
            states: vec![s0],
            actions: Vec::new(),
        };
        extend(system, n_path_states, &mut path, &mut out);
    }
    Ok(out)
}

fn extend(system: &TabularSystem, target_len: usize, path: &mut Path, out: &mut Vec<Path>) {
    if path.states.len() == target_len {
        out.push(path.clone());
        return;
    }
    let s = *path.states.last().unwrap();
    for a in 0..system.n_actions() {
        for &next in system.allowed(s, a) {
            if system.transition_prob(s, a, next) > 0.0 {
                path.actions.push(a);
                path.states.push(next);
                extend(system, target_len, path, out);
                path.states.pop();
                path.actions.pop();
            }
        }
    }
}

fn count_paths(system: &TabularSystem, n_path_states: usize, start: Option<usize>) -> Result<u128> {
    let n = system.n_states();
    // counts[s] = number of feasible suffixes of the remaining length from s.
    let mut counts = vec![1u128; n];
    for _ in 0..n_path_states - 1 {
        let mut next_counts = vec![0u128; n];
        for s in 0..n {
            for a in 0..system.n_actions() {
                for &next in system.allowed(s, a) {
                    if system.transition_prob(s, a, next) > 0.0 {
                        next_counts[s] += counts[next];
                    }
                }
            }
        }
        counts = next_counts;
    }
    Ok(match start {
        Some(s) => counts[s],
        None => counts.iter().sum(),
    })
}

/// Exhaustive enumeration of full trajectories (`horizon` state-action pairs,
/// including the trailing action whose successor is never observed), each with
/// its probability weight under (D0, pi, T) and its discounted return.
///
/// Weights over all enumerated trajectories sum to one.
pub fn enumerate_returns(
    system: &TabularSystem,
    policy: &Policy,
    reward: &RewardModel,
    gamma: f64,
    horizon: usize,
) -> Result<Vec<(Trajectory, f64, f64)>> {
    check_gamma(gamma)?;
    let paths = enumerate_paths(system, horizon, None)?;
    if paths.len().saturating_mul(system.n_actions()) > ENUMERATION_CAP {
        return Err(CoreError::InstanceTooLarge(
            paths.len() * system.n_actions(),
            ENUMERATION_CAP,
        ));
    }
    let mut out = Vec::with_capacity(paths.len() * system.n_actions());
    for path in paths {
        let d0 = system.initial_dist()[path.states[0]];
        if d0 == 0.0 {
            continue;
        }
        let base = d0
            * path.dynamics_weight(system)
            * path
                .actions
                .iter()
                .enumerate()
                .map(|(t, &a)| policy.prob(path.states[t], a))
                .product::<f64>();
        let ret = path.discounted_return(reward, gamma);
        let last = *path.states.last().unwrap();
        for a_last in 0..system.n_actions() {
            let weight = base * policy.prob(last, a_last);
            if weight == 0.0 {
                continue;
            }
            let mut steps: Vec<(usize, usize)> = path
                .states
                .iter()
                .zip(path.actions.iter())
                .map(|(&s, &a)| (s, a))
                .collect();
            steps.push((last, a_last));
            out.push((Trajectory::new(steps), weight, ret));
        }
    }
    Ok(out)
}

/// Backward DP for the expected `horizon`-state discounted return:
/// `V_1(s) = r(s)`, `V_k(s) = r(s) + gamma * sum_a pi sum_s' T V_{k-1}(s')`.
pub fn finite_horizon_value(
    system: &TabularSystem,
    policy: &Policy,
    reward: &RewardModel,
    gamma: f64,
    horizon: usize,
) -> Array1<f64> {
    let n = system.n_states();
    let r: Array1<f64> = (0..n).map(|s| reward.reward(s)).collect();
    let mut v = r.clone();
    for _ in 1..horizon {
        let mut next = r.clone();
        for s in 0..n {
            let mut acc = 0.0;
            for a in 0..system.n_actions() {
                let pi = policy.prob(s, a);
                if pi == 0.0 {
                    continue;
                }
                for &sn in system.allowed(s, a) {
                    acc += pi * system.transition_prob(s, a, sn) * v[sn];
                }
            }
            next[s] += gamma * acc;
        }
        v = next;
    }
    v
}

/// Monte-Carlo estimate of the infinite-horizon discounted state values via
/// truncated rollouts. Returns per-state (mean, standard error).
pub fn monte_carlo_value(
    system: &TabularSystem,
    policy: &Policy,
    reward: &RewardModel,
    gamma: f64,
    n_rollouts: usize,
    seed: u64,
) -> (Array1<f64>, Array1<f64>) {
    // Truncate once the remaining tail is far below sampling noise.
    let horizon = ((f64::EPSILON.ln() / gamma.ln()).ceil() as usize).max(64);
    let n = system.n_states();
    let mut mean = Array1::zeros(n);
    let mut sem = Array1::zeros(n);
    for s0 in 0..n {
        let mut rng = stream_rng(seed, s0 as u64);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_rollouts {
            let mut state = s0;
            let mut ret = 0.0;
            let mut w = 1.0;
            for _ in 0..horizon {
                ret += w * reward.reward(state);
                let action = sample_index(policy.probs().row(state).as_slice().unwrap(), &mut rng);
                state = sample_index(
                    system
                        .transition()
                        .index_axis(ndarray::Axis(0), state)
                        .index_axis(ndarray::Axis(0), action)
                        .as_slice()
                        .unwrap(),
                    &mut rng,
                );
                w *= gamma;
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let m = sum / n_rollouts as f64;
        let var = (sum_sq / n_rollouts as f64 - m * m).max(0.0);
        mean[s0] = m;
        sem[s0] = (var / n_rollouts as f64).sqrt();
    }
    (mean, sem)
}

/// Inverse-CDF draw from an unnormalized-but-valid probability slice.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Float round-off: fall back to the last positive entry.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("probability slice has positive mass")
}
