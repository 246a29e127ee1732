//! Finite-MDP representation and exact solvers.
//!
//! The interactive system is the environment: `TabularSystem` holds the
//! state/action sets, a fixed connectivity graph, and the (mutable)
//! transition distribution. The user is the agent, represented by `Policy`.
//! Rewards are linear in one-hot state features, so a `RewardModel` is just
//! a weight per state.
//!
//! Return convention used throughout: a trajectory's return is
//! `sum_t gamma^t r(S_t)` counting the start state at weight 1, matching the
//! discounted feature accrual used by scored-trajectory regression.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Tolerance for "this row is a probability distribution" checks.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// A finite interactive system: `|S|` states, `|A|` actions, a fixed
/// connectivity graph, a row-stochastic transition table supported on that
/// graph, and an initial-state distribution.
///
/// Connectivity is immutable after creation; the transition table is the one
/// field the optimizer is allowed to replace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSystem {
    n_states: usize,
    n_actions: usize,
    /// `connectivity[s][a]` is the sorted set of allowed next states.
    connectivity: Vec<Vec<Vec<usize>>>,
    /// `transition[[s, a, s']]` = T(s' | s, a).
    transition: Array3<f64>,
    /// D0 over states.
    initial_dist: Array1<f64>,
}

impl TabularSystem {
    /// Builds a system and checks every invariant.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        connectivity: Vec<Vec<Vec<usize>>>,
        transition: Array3<f64>,
        initial_dist: Array1<f64>,
    ) -> Result<Self> {
        let system = Self {
            n_states,
            n_actions,
            connectivity,
            transition,
            initial_dist,
        };
        system.validate()?;
        Ok(system)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Allowed next states for `(s, a)`, sorted ascending.
    pub fn allowed(&self, state: usize, action: usize) -> &[usize] {
        &self.connectivity[state][action]
    }

    pub fn connectivity(&self) -> &Vec<Vec<Vec<usize>>> {
        &self.connectivity
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[[state, action, next]]
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    /// One-hot feature vector of a state.
    pub fn features(&self, state: usize) -> Array1<f64> {
        let mut phi = Array1::zeros(self.n_states);
        phi[state] = 1.0;
        phi
    }

    /// Replaces the transition table, keeping connectivity, D0 and features.
    /// The new table must respect the original connectivity graph.
    pub fn with_transition(&self, transition: Array3<f64>) -> Result<Self> {
        let system = Self {
            transition,
            ..self.clone()
        };
        system.validate()?;
        Ok(system)
    }

    /// Checks all structural invariants: row stochasticity, support inside
    /// the connectivity graph, and a normalized initial distribution.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(CoreError::InvalidConfig(
                "state and action counts must be positive".into(),
            ));
        }
        if self.connectivity.len() != self.n_states
            || self.connectivity.iter().any(|per_a| per_a.len() != self.n_actions)
        {
            return Err(CoreError::InvariantViolation(
                "connectivity shape does not match (n_states, n_actions)".into(),
            ));
        }
        if self.transition.dim() != (self.n_states, self.n_actions, self.n_states) {
            return Err(CoreError::InvariantViolation(
                "transition shape does not match (n_states, n_actions, n_states)".into(),
            ));
        }
        if self.initial_dist.len() != self.n_states {
            return Err(CoreError::InvariantViolation(
                "initial distribution length does not match n_states".into(),
            ));
        }
        for (s, per_a) in self.connectivity.iter().enumerate() {
            for (a, allowed) in per_a.iter().enumerate() {
                if allowed.is_empty() {
                    return Err(CoreError::InvariantViolation(format!(
                        "connectivity[({s}, {a})] is empty"
                    )));
                }
                if allowed.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(CoreError::InvariantViolation(format!(
                        "connectivity[({s}, {a})] is not a sorted set"
                    )));
                }
                if *allowed.last().unwrap() >= self.n_states {
                    return Err(CoreError::InvariantViolation(format!(
                        "connectivity[({s}, {a})] references a state out of range"
                    )));
                }
            }
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut sum = 0.0;
                for next in 0..self.n_states {
                    let p = self.transition[[s, a, next]];
                    if p < 0.0 {
                        return Err(CoreError::InvariantViolation(format!(
                            "T[{s}][{a}][{next}] = {p} is negative"
                        )));
                    }
                    if p > 0.0 && self.connectivity[s][a].binary_search(&next).is_err() {
                        return Err(CoreError::InvariantViolation(format!(
                            "T[{s}][{a}][{next}] = {p} lies outside the connectivity graph"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(CoreError::InvariantViolation(format!(
                        "transition row ({s}, {a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        check_distribution(self.initial_dist.as_slice().unwrap(), "initial distribution")?;
        Ok(())
    }
}

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.iter().any(|&p| p < 0.0) {
        return Err(CoreError::InvariantViolation(format!(
            "{what} has a negative entry"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(CoreError::InvariantViolation(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Linear reward over one-hot state features: r(s) = theta[s].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    weights: Array1<f64>,
}

impl RewardModel {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(CoreError::InvariantViolation(
                "reward weights must be finite".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn zeros(n_states: usize) -> Self {
        Self {
            weights: Array1::zeros(n_states),
        }
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn n_states(&self) -> usize {
        self.weights.len()
    }

    /// r(s) = theta^T phi(s), which for one-hot features is theta[s].
    pub fn reward(&self, state: usize) -> f64 {
        self.weights[state]
    }

    /// Min-max rescaling of the weights onto [0, 1]. Greedy and softmax-ratio
    /// structure is preserved up to the positive affine map; a constant weight
    /// vector maps to all zeros.
    pub fn min_max_normalized(&self) -> Self {
        let min = self.weights.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        if !(span > 1e-12) {
            return Self::zeros(self.weights.len());
        }
        Self {
            weights: self.weights.mapv(|w| (w - min) / span),
        }
    }
}

/// A row-stochastic policy table: `probs[[s, a]]` = pi(a | s).
///
/// Also used for policies over the role-swapped MDP, where "states" are
/// (state, action) composites and "actions" are next states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.outer_iter().enumerate() {
            check_distribution(
                row.as_slice().expect("policy rows are contiguous"),
                &format!("policy row {s}"),
            )?;
        }
        Ok(Self { probs })
    }

    /// Uniform policy over `n_actions` in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[[state, action]]
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Index of the largest entry in a row, lowest index on ties.
    pub fn argmax(&self, state: usize) -> usize {
        argmax_slice(self.probs.row(state).as_slice().unwrap())
    }
}

pub(crate) fn argmax_slice(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin_slice(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// An alternating state/action sequence, optionally carrying a score.
///
/// `steps[t] = (S_t, A_t)`; the final action is drawn but its successor is
/// not recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    pub score: Option<f64>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Self { steps, score: None }
    }

    /// Number of (state, action) pairs.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|&(s, _)| s)
    }

    /// Checks the length bound and that every recorded transition stays on
    /// the connectivity graph.
    pub fn validate(&self, system: &TabularSystem, min_len: usize, max_len: usize) -> Result<()> {
        if self.len() < min_len || self.len() > max_len {
            return Err(CoreError::InvariantViolation(format!(
                "trajectory length {} outside [{min_len}, {max_len}]",
                self.len()
            )));
        }
        for w in self.steps.windows(2) {
            let (s, a) = w[0];
            let (next, _) = w[1];
            if system.allowed(s, a).binary_search(&next).is_err() {
                return Err(CoreError::InvariantViolation(format!(
                    "transition ({s}, {a}) -> {next} leaves the connectivity graph"
                )));
            }
        }
        Ok(())
    }

    /// Discounted return sum_t gamma^t r(S_t) over the recorded states.
    pub fn discounted_return(&self, reward: &RewardModel, gamma: f64) -> f64 {
        let mut acc = 0.0;
        let mut w = 1.0;
        for (s, _) in &self.steps {
            acc += w * reward.reward(*s);
            w *= gamma;
        }
        acc
    }
}

/// Evaluates a fixed policy: the unique V with
/// `V(s) = r(s) + gamma * sum_a pi(a|s) sum_s' T(s'|s,a) V(s')`,
/// solved by damped fixed-point sweeps to a Bellman residual below 1e-8.
pub fn policy_value(
    system: &TabularSystem,
    policy: &Policy,
    reward: &RewardModel,
    gamma: f64,
) -> Result<Array1<f64>> {
    check_gamma(gamma)?;
    system.validate()?;
    check_policy_for(system, policy)?;

    let n = system.n_states();
    // Collapse pi and T into a single state-to-state kernel once.
    let mut kernel = Array2::<f64>::zeros((n, n));
    for s in 0..n {
        for a in 0..system.n_actions() {
            let pi = policy.prob(s, a);
            if pi == 0.0 {
                continue;
            }
            for &next in system.allowed(s, a) {
                kernel[[s, next]] += pi * system.transition_prob(s, a, next);
            }
        }
    }

    let r: Array1<f64> = (0..n).map(|s| reward.reward(s)).collect();
    let mut v = Array1::<f64>::zeros(n);
    let max_sweeps = 200_000;
    for sweep in 0..max_sweeps {
        let next = &r + &(kernel.dot(&v) * gamma);
        let residual = max_abs_diff(&next, &v);
        v = next;
        if residual < POLICY_EVAL_TOL {
            return Ok(v);
        }
        if sweep == max_sweeps - 1 {
            return Err(CoreError::ConvergenceFailure {
                what: "policy evaluation",
                iterations: max_sweeps,
                residual,
            });
        }
    }
    unreachable!()
}

// Sweep-to-sweep change below this leaves the true error around two orders
// of magnitude under the 1e-8 residual contract even at gamma close to 1.
const POLICY_EVAL_TOL: f64 = 1e-12;

/// D0-weighted state value of a policy; with an optimal policy this is the
/// quality metric of the system.
pub fn expected_state_value(
    system: &TabularSystem,
    policy: &Policy,
    reward: &RewardModel,
    gamma: f64,
) -> Result<f64> {
    let v = policy_value(system, policy, reward, gamma)?;
    Ok(system.initial_dist().dot(&v))
}

/// Soft value iteration with log-sum-exp backups:
/// `Q(s,a) = r(s) + gamma * sum_s' T(s'|s,a) V(s')`, `V(s) = lse_a Q(s,a)`,
/// iterated from zero until the max-norm change drops below `tolerance`.
/// The returned stochastic policy is `pi(a|s) = exp(Q(s,a) - V(s))`, row
/// normalized.
pub fn soft_value_iteration(
    system: &TabularSystem,
    reward: &RewardModel,
    gamma: f64,
    tolerance: f64,
) -> Result<(Array1<f64>, Policy)> {
    soft_value_iteration_capped(system, reward, gamma, tolerance, SOFT_VI_MAX_SWEEPS)
}

pub const SOFT_VI_MAX_SWEEPS: usize = 10_000;

pub fn soft_value_iteration_capped(
    system: &TabularSystem,
    reward: &RewardModel,
    gamma: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<(Array1<f64>, Policy)> {
    check_gamma(gamma)?;
    if tolerance <= 0.0 {
        return Err(CoreError::InvalidConfig("tolerance must be positive".into()));
    }
    system.validate()?;

    let n = system.n_states();
    let n_actions = system.n_actions();
    let mut v = Array1::<f64>::zeros(n);
    let mut q = Array2::<f64>::zeros((n, n_actions));
    let mut residual = f64::INFINITY;

    for _ in 0..max_sweeps {
        for s in 0..n {
            for a in 0..n_actions {
                let mut exp_next = 0.0;
                for &next in system.allowed(s, a) {
                    exp_next += system.transition_prob(s, a, next) * v[next];
                }
                q[[s, a]] = reward.reward(s) + gamma * exp_next;
            }
        }
        let new_v: Array1<f64> = q
            .outer_iter()
            .map(|row| log_sum_exp(row.as_slice().unwrap()))
            .collect();
        residual = max_abs_diff(&new_v, &v);
        v = new_v;
        if residual < tolerance {
            // One more Q refresh so that pi = exp(Q - V) is consistent with
            // the returned V.
            for s in 0..n {
                for a in 0..n_actions {
                    let mut exp_next = 0.0;
                    for &next in system.allowed(s, a) {
                        exp_next += system.transition_prob(s, a, next) * v[next];
                    }
                    q[[s, a]] = reward.reward(s) + gamma * exp_next;
                }
            }
            let mut probs = Array2::<f64>::zeros((n, n_actions));
            for s in 0..n {
                let lse = log_sum_exp(q.row(s).as_slice().unwrap());
                let mut row_sum = 0.0;
                for a in 0..n_actions {
                    let p = (q[[s, a]] - lse).exp();
                    probs[[s, a]] = p;
                    row_sum += p;
                }
                for a in 0..n_actions {
                    probs[[s, a]] /= row_sum;
                }
            }
            return Ok((v, Policy::new(probs)?));
        }
    }

    Err(CoreError::ConvergenceFailure {
        what: "soft value iteration",
        iterations: max_sweeps,
        residual,
    })
}

/// Plain value iteration with hard max backups:
/// `Q(s,a) = r(s) + gamma * sum_s' T(s'|s,a) V(s')`, `V(s) = max_a Q(s,a)`.
/// Returns the optimal values and the deterministic greedy policy
/// (lowest-index tie-breaking). `sum_s D0(s) V*(s)` is the quality metric
/// reported for a system.
pub fn value_iteration(
    system: &TabularSystem,
    reward: &RewardModel,
    gamma: f64,
    tolerance: f64,
) -> Result<(Array1<f64>, Policy)> {
    check_gamma(gamma)?;
    if tolerance <= 0.0 {
        return Err(CoreError::InvalidConfig("tolerance must be positive".into()));
    }
    system.validate()?;

    let n = system.n_states();
    let n_actions = system.n_actions();
    let q_values = |v: &Array1<f64>, s: usize, a: usize| {
        let mut exp_next = 0.0;
        for &next in system.allowed(s, a) {
            exp_next += system.transition_prob(s, a, next) * v[next];
        }
        reward.reward(s) + gamma * exp_next
    };

    let mut v = Array1::<f64>::zeros(n);
    let max_sweeps = 1_000_000;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut next = Array1::<f64>::zeros(n);
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                best = best.max(q_values(&v, s, a));
            }
            next[s] = best;
        }
        residual = max_abs_diff(&next, &v);
        v = next;
        if residual < tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CoreError::ConvergenceFailure {
            what: "value iteration",
            iterations: max_sweeps,
            residual,
        });
    }

    let mut probs = Array2::<f64>::zeros((n, n_actions));
    for s in 0..n {
        let mut best_a = 0;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..n_actions {
            let q = q_values(&v, s, a);
            if q > best_q {
                best_q = q;
                best_a = a;
            }
        }
        probs[[s, best_a]] = 1.0;
    }
    Ok((v, Policy::new(probs)?))
}

/// Numerically stable log(sum(exp(xs))).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(CoreError::InvalidConfig(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

pub(crate) fn check_policy_for(system: &TabularSystem, policy: &Policy) -> Result<()> {
    if policy.n_states() != system.n_states() || policy.n_actions() != system.n_actions() {
        return Err(CoreError::InvariantViolation(
            "policy shape does not match the system".into(),
        ));
    }
    Policy::new(policy.probs().clone()).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Deterministic two-state cycle s0 -> s1 -> s0 with a single action.
    pub(crate) fn two_state_cycle() -> TabularSystem {
        let connectivity = vec![vec![vec![1]], vec![vec![0]]];
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 0]] = 1.0;
        TabularSystem::new(2, 1, connectivity, t, array![1.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let system = two_state_cycle();
        let policy = Policy::uniform(2, 1);
        let v = policy_value(&system, &policy, &RewardModel::zeros(2), 0.9).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn two_state_cycle_matches_geometric_series() {
        // r = (0, 1), gamma = 0.5, start s0: return = sum_k 0.5^(2k+1) = 2/3.
        let system = two_state_cycle();
        let policy = Policy::uniform(2, 1);
        let reward = RewardModel::new(array![0.0, 1.0]).unwrap();
        let v = policy_value(&system, &policy, &reward, 0.5).unwrap();
        assert_abs_diff_eq!(v[0], 2.0 / 3.0, epsilon = 1e-8);
        // Cross-check against a horizon-100 rollout sum of the same cycle.
        let mut rollout = 0.0;
        let mut state = 0;
        let mut w = 1.0;
        for _ in 0..100 {
            rollout += w * reward.reward(state);
            state = 1 - state;
            w *= 0.5;
        }
        assert_abs_diff_eq!(v[0], rollout, epsilon = 1e-8);
    }

    #[test]
    fn expected_state_value_degenerate_start() {
        let system = two_state_cycle();
        let policy = Policy::uniform(2, 1);
        let reward = RewardModel::new(array![0.0, 1.0]).unwrap();
        let v = policy_value(&system, &policy, &reward, 0.5).unwrap();
        let ev = expected_state_value(&system, &policy, &reward, 0.5).unwrap();
        assert_abs_diff_eq!(ev, v[0], epsilon = 1e-12);
    }

    #[test]
    fn expected_state_value_uniform_mean() {
        // Uniform D0 over four states whose V works out to (1, 2, 3, 4).
        // Build it directly: single action, self loops, gamma 0.5,
        // r = (0.5, 1.0, 1.5, 2.0) gives V = r / (1 - gamma) = (1, 2, 3, 4).
        let connectivity = (0..4).map(|s| vec![vec![s]]).collect();
        let mut t = Array3::zeros((4, 1, 4));
        for s in 0..4 {
            t[[s, 0, s]] = 1.0;
        }
        let system =
            TabularSystem::new(4, 1, connectivity, t, Array1::from_elem(4, 0.25)).unwrap();
        let reward = RewardModel::new(array![0.5, 1.0, 1.5, 2.0]).unwrap();
        let policy = Policy::uniform(4, 1);
        let ev = expected_state_value(&system, &policy, &reward, 0.5).unwrap();
        assert_abs_diff_eq!(ev, 2.5, epsilon = 1e-8);
    }

    #[test]
    fn non_stochastic_inputs_rejected() {
        let system = two_state_cycle();
        let bad = Policy {
            probs: array![[0.5], [0.5]],
        };
        let err = policy_value(&system, &bad, &RewardModel::zeros(2), 0.9);
        assert!(matches!(err, Err(CoreError::InvariantViolation(_))));

        let mut t = system.transition().clone();
        t[[0, 0, 1]] = 0.7;
        assert!(system.with_transition(t).is_err());
    }

    #[test]
    fn support_outside_connectivity_rejected() {
        let system = two_state_cycle();
        let mut t = system.transition().clone();
        t[[0, 0, 1]] = 0.5;
        t[[0, 0, 0]] = 0.5; // s0 -> s0 is not an edge
        assert!(matches!(
            system.with_transition(t),
            Err(CoreError::InvariantViolation(_))
        ));
    }

    #[test]
    fn soft_vi_single_action_collapses_to_policy_evaluation() {
        let system = two_state_cycle();
        let reward = RewardModel::new(array![0.0, 1.0]).unwrap();
        let (v, policy) = soft_value_iteration(&system, &reward, 0.5, 1e-10).unwrap();
        // |A| = 1: the softmax collapses, the policy is one-hot, and the
        // values equal plain policy evaluation (log 1 = 0 adjustment).
        assert_eq!(policy.prob(0, 0), 1.0);
        assert_eq!(policy.prob(1, 0), 1.0);
        let plain = policy_value(&system, &Policy::uniform(2, 1), &reward, 0.5).unwrap();
        assert_abs_diff_eq!(v[0], plain[0], epsilon = 1e-7);
        assert_abs_diff_eq!(v[1], plain[1], epsilon = 1e-7);
    }

    #[test]
    fn soft_vi_dominating_action_saturates() {
        // Two states, two actions; action 1 leads to a state with a huge
        // reward margin, so its softmax probability approaches 1.
        let connectivity = vec![vec![vec![0], vec![1]], vec![vec![1], vec![1]]];
        let mut t = Array3::zeros((2, 2, 2));
        t[[0, 0, 0]] = 1.0;
        t[[0, 1, 1]] = 1.0;
        t[[1, 0, 1]] = 1.0;
        t[[1, 1, 1]] = 1.0;
        let system = TabularSystem::new(2, 2, connectivity, t, array![1.0, 0.0]).unwrap();
        let reward = RewardModel::new(array![0.0, 200.0]).unwrap();
        let (_, policy) = soft_value_iteration(&system, &reward, 0.9, 1e-9).unwrap();
        assert!(policy.prob(0, 1) > 1.0 - 1e-12);
    }

    #[test]
    fn soft_vi_softmax_consistency() {
        // pi(a|s) proportional to exp(Q(s,a)): the log-ratio of two actions
        // equals their Q difference.
        let connectivity = vec![vec![vec![0, 1], vec![1]], vec![vec![0], vec![0, 1]]];
        let mut t = Array3::zeros((2, 2, 2));
        t[[0, 0, 0]] = 0.3;
        t[[0, 0, 1]] = 0.7;
        t[[0, 1, 1]] = 1.0;
        t[[1, 0, 0]] = 1.0;
        t[[1, 1, 0]] = 0.6;
        t[[1, 1, 1]] = 0.4;
        let system = TabularSystem::new(2, 2, connectivity, t, array![0.5, 0.5]).unwrap();
        let reward = RewardModel::new(array![0.25, 1.5]).unwrap();
        let gamma = 0.9;
        let (v, policy) = soft_value_iteration(&system, &reward, gamma, 1e-12).unwrap();
        for s in 0..2 {
            let q: Vec<f64> = (0..2)
                .map(|a| {
                    let exp_next: f64 = system
                        .allowed(s, a)
                        .iter()
                        .map(|&n| system.transition_prob(s, a, n) * v[n])
                        .sum();
                    reward.reward(s) + gamma * exp_next
                })
                .collect();
            let log_ratio = policy.prob(s, 0).ln() - policy.prob(s, 1).ln();
            assert_abs_diff_eq!(log_ratio, q[0] - q[1], epsilon = 1e-8);
        }
    }

    #[test]
    fn soft_vi_convergence_failure_reports_residual() {
        let system = two_state_cycle();
        let reward = RewardModel::new(array![0.0, 5.0]).unwrap();
        let err = soft_value_iteration_capped(&system, &reward, 0.9, 1e-12, 2);
        match err {
            Err(CoreError::ConvergenceFailure { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn min_max_normalization() {
        let r = RewardModel::new(array![-1.0, 0.0, 3.0]).unwrap();
        let n = r.min_max_normalized();
        assert_abs_diff_eq!(n.reward(0), 0.0);
        assert_abs_diff_eq!(n.reward(1), 0.25);
        assert_abs_diff_eq!(n.reward(2), 1.0);
        let constant = RewardModel::new(array![2.0, 2.0]).unwrap();
        assert_eq!(constant.min_max_normalized(), RewardModel::zeros(2));
    }
}
