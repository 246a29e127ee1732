//! Transition-distribution optimization by agent/environment role reversal.
//!
//! For a fixed user policy, finding the best transition distribution is the
//! same problem as finding the best policy in a role-swapped MDP whose states
//! are (state, action) composites, whose actions are next states restricted
//! to the connectivity graph, and whose dynamics are the user policy. The
//! outer loop alternates: re-solve the user against the current system,
//! optimize the system against that user, repeat.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::behavior::{mix_behaviors, noisy_policy, sample_trajectories, score_trajectories};
use crate::error::{CoreError, Result};
use crate::irl::{dm_irl, maxent_irl, MaxEntParams};
use crate::mdp::{
    check_gamma, check_policy_for, expected_state_value, soft_value_iteration, value_iteration,
    Policy, RewardModel, TabularSystem,
};
use crate::rng::{derive_seed, fnv1a64};
use crate::world::{sample_reward, sample_system, WorldConfig};

/// Internal solver tolerance; tight enough that solver error is invisible at
/// the 1e-6 slack the monotonicity properties are stated with.
pub const SOLVER_TOL: f64 = 1e-10;

/// The role-swapped MDP. Composite state `(s, a)` has index
/// `s * n_actions + a`; its action set is the connectivity list of `(s, a)`;
/// taking action `s'` lands in composite `(s', a')` with probability
/// `pi(a'|s')` under the frozen user policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReformulatedMdp {
    n_states: usize,
    n_actions: usize,
    /// Allowed next states per composite, inherited from the connectivity graph.
    actions_plus: Vec<Vec<usize>>,
    /// The frozen user policy; the swapped dynamics read straight from it.
    user_policy: Policy,
    /// r+((s, a)) = r(s).
    reward_plus: Array1<f64>,
    gamma: f64,
    /// D0+((s, a)) = D0(s) * pi(a|s).
    initial_plus: Array1<f64>,
}

impl ReformulatedMdp {
    pub fn n_composites(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn composite_index(&self, state: usize, action: usize) -> usize {
        state * self.n_actions + action
    }

    pub fn composite_of(&self, index: usize) -> (usize, usize) {
        (index / self.n_actions, index % self.n_actions)
    }

    pub fn allowed_plus(&self, composite: usize) -> &[usize] {
        &self.actions_plus[composite]
    }

    /// T+((s', a') | (s, a), a+): zero unless the target composite's state
    /// equals the chosen action `a+ = s'`, in which case it is exactly
    /// pi(a'|s').
    pub fn transition_plus(&self, _from: usize, action_plus: usize, to: usize) -> f64 {
        let (to_state, to_action) = self.composite_of(to);
        if to_state != action_plus {
            0.0
        } else {
            self.user_policy.prob(to_state, to_action)
        }
    }

    pub fn reward_plus(&self, composite: usize) -> f64 {
        self.reward_plus[composite]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_plus(&self) -> &Array1<f64> {
        &self.initial_plus
    }

    pub fn user_policy(&self) -> &Policy {
        &self.user_policy
    }
}

/// Lines 4-5 of the optimizer: populate the role-swapped MDP from the system,
/// a frozen user policy, and the reward.
pub fn build_mdp_plus(
    system: &TabularSystem,
    user_policy: &Policy,
    reward: &RewardModel,
    gamma: f64,
) -> Result<ReformulatedMdp> {
    check_gamma(gamma)?;
    check_policy_for(system, user_policy)?;
    if reward.n_states() != system.n_states() {
        return Err(CoreError::InvariantViolation(
            "reward dimension does not match the system".into(),
        ));
    }
    let n_states = system.n_states();
    let n_actions = system.n_actions();
    let n_plus = n_states * n_actions;
    let mut actions_plus = Vec::with_capacity(n_plus);
    let mut reward_plus = Array1::zeros(n_plus);
    let mut initial_plus = Array1::zeros(n_plus);
    for s in 0..n_states {
        for a in 0..n_actions {
            actions_plus.push(system.allowed(s, a).to_vec());
            let i = s * n_actions + a;
            reward_plus[i] = reward.reward(s);
            initial_plus[i] = system.initial_dist()[s] * user_policy.prob(s, a);
        }
    }
    Ok(ReformulatedMdp {
        n_states,
        n_actions,
        actions_plus,
        user_policy: user_policy.clone(),
        reward_plus,
        gamma,
        initial_plus,
    })
}

/// Value iteration on the role-swapped MDP restricted to allowed actions;
/// returns the deterministic greedy policy (rows over original states,
/// lowest-index tie-breaking).
pub fn solve_mdp_plus(mdp_plus: &ReformulatedMdp, tolerance: f64) -> Result<Policy> {
    if tolerance <= 0.0 {
        return Err(CoreError::InvalidConfig("tolerance must be positive".into()));
    }
    let n_plus = mdp_plus.n_composites();
    let n_states = mdp_plus.n_states;
    let n_actions = mdp_plus.n_actions;
    let gamma = mdp_plus.gamma;
    let mut v = Array1::<f64>::zeros(n_plus);
    let max_sweeps = 1_000_000;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for _ in 0..max_sweeps {
        // W(s') = expected composite value after the user reacts in s'.
        let w = continuation_values(mdp_plus, &v);
        let mut next = Array1::<f64>::zeros(n_plus);
        for i in 0..n_plus {
            let best = mdp_plus.actions_plus[i]
                .iter()
                .map(|&target| w[target])
                .fold(f64::NEG_INFINITY, f64::max);
            next[i] = mdp_plus.reward_plus[i] + gamma * best;
        }
        residual = crate::mdp::max_abs_diff(&next, &v);
        v = next;
        if residual < tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CoreError::ConvergenceFailure {
            what: "role-swapped value iteration",
            iterations: max_sweeps,
            residual,
        });
    }

    let w = continuation_values(mdp_plus, &v);
    let mut probs = Array2::zeros((n_plus, n_states));
    for i in 0..n_plus {
        let allowed = &mdp_plus.actions_plus[i];
        let mut best = allowed[0];
        for &target in &allowed[1..] {
            if w[target] > w[best] {
                best = target;
            }
        }
        probs[[i, best]] = 1.0;
    }
    let _ = n_actions;
    Policy::new(probs)
}

/// W(s') = sum_a' pi(a'|s') V+((s', a')).
fn continuation_values(mdp_plus: &ReformulatedMdp, v: &Array1<f64>) -> Array1<f64> {
    let mut w = Array1::zeros(mdp_plus.n_states);
    for s in 0..mdp_plus.n_states {
        let mut acc = 0.0;
        for a in 0..mdp_plus.n_actions {
            acc += mdp_plus.user_policy.prob(s, a) * v[s * mdp_plus.n_actions + a];
        }
        w[s] = acc;
    }
    w
}

/// Evaluates an arbitrary (possibly stochastic) policy over composites in the
/// role-swapped MDP.
pub fn policy_value_plus(mdp_plus: &ReformulatedMdp, pi_plus: &Policy) -> Result<Array1<f64>> {
    if pi_plus.n_states() != mdp_plus.n_composites() || pi_plus.n_actions() != mdp_plus.n_states {
        return Err(CoreError::InvariantViolation(
            "composite policy shape does not match the role-swapped MDP".into(),
        ));
    }
    let n_plus = mdp_plus.n_composites();
    let gamma = mdp_plus.gamma;
    let mut v = Array1::<f64>::zeros(n_plus);
    let max_sweeps = 1_000_000;
    for _ in 0..max_sweeps {
        let w = continuation_values(mdp_plus, &v);
        let mut next = Array1::<f64>::zeros(n_plus);
        for i in 0..n_plus {
            let mut acc = 0.0;
            for &target in &mdp_plus.actions_plus[i] {
                let p = pi_plus.prob(i, target);
                if p > 0.0 {
                    acc += p * w[target];
                }
            }
            next[i] = mdp_plus.reward_plus[i] + gamma * acc;
        }
        let residual = crate::mdp::max_abs_diff(&next, &v);
        v = next;
        if residual < SOLVER_TOL {
            return Ok(v);
        }
    }
    Err(CoreError::ConvergenceFailure {
        what: "role-swapped policy evaluation",
        iterations: max_sweeps,
        residual: f64::NAN,
    })
}

/// D0+-weighted composite value.
pub fn expected_value_plus(mdp_plus: &ReformulatedMdp, pi_plus: &Policy) -> Result<f64> {
    let v = policy_value_plus(mdp_plus, pi_plus)?;
    Ok(mdp_plus.initial_plus.dot(&v))
}

/// Maps the system's current transition table into a composite policy:
/// `pi+((s,a) -> s') = T(s'|s,a)`. Inverse of [`extract_transition`].
pub fn transition_as_policy_plus(system: &TabularSystem) -> Policy {
    let n_plus = system.n_states() * system.n_actions();
    let mut probs = Array2::zeros((n_plus, system.n_states()));
    for s in 0..system.n_states() {
        for a in 0..system.n_actions() {
            let i = s * system.n_actions() + a;
            for &next in system.allowed(s, a) {
                probs[[i, next]] = system.transition_prob(s, a, next);
            }
        }
    }
    Policy::new(probs).expect("transition rows are stochastic")
}

/// Line 8: reads the optimized composite policy back as a transition table,
/// keeping connectivity, D0 and features from the input system.
pub fn extract_transition(pi_plus: &Policy, system: &TabularSystem) -> Result<TabularSystem> {
    let n_states = system.n_states();
    let n_actions = system.n_actions();
    if pi_plus.n_states() != n_states * n_actions || pi_plus.n_actions() != n_states {
        return Err(CoreError::InvariantViolation(
            "composite policy shape does not match the system".into(),
        ));
    }
    let mut transition = system.transition().clone();
    for s in 0..n_states {
        for a in 0..n_actions {
            let i = s * n_actions + a;
            for next in 0..n_states {
                transition[[s, a, next]] = pi_plus.prob(i, next);
            }
        }
    }
    system.with_transition(transition)
}

/// One optimizer step.
#[derive(Debug, Clone)]
pub struct IsoIteration {
    pub system: TabularSystem,
    /// The stochastic user policy re-solved on the optimized system under
    /// the true reward; the next iteration's logs come from this behavior.
    pub user_policy: Policy,
    /// Expected state value of the optimized system under the true reward.
    pub quality: f64,
}

/// D0-weighted optimal state value under `reward`: the quality metric.
/// Uses the value-maximizing (greedy) user policy, so the quality of a fixed
/// system is exactly `sum_s D0(s) max_pi V(s)`.
pub fn system_quality(system: &TabularSystem, reward: &RewardModel, gamma: f64) -> Result<f64> {
    let (_, optimal) = value_iteration(system, reward, gamma, SOLVER_TOL)?;
    expected_state_value(system, &optimal, reward, gamma)
}

/// Executes one pass of the optimizer: solve the user policy under
/// `opt_reward` on the current system, build and solve the role-swapped MDP,
/// extract the new transition table, then re-solve the user on the optimized
/// system and evaluate. Optimization sees only `opt_reward`; `true_reward`
/// enters evaluation alone.
pub fn iso_iteration(
    system: &TabularSystem,
    opt_reward: &RewardModel,
    true_reward: &RewardModel,
    gamma: f64,
) -> Result<IsoIteration> {
    let (_, modeled_user) = soft_value_iteration(system, opt_reward, gamma, SOLVER_TOL)?;
    let mdp_plus = build_mdp_plus(system, &modeled_user, opt_reward, gamma)?;
    let pi_plus = solve_mdp_plus(&mdp_plus, SOLVER_TOL)?;
    let optimized = extract_transition(&pi_plus, system)?;
    let (_, adapted_user) = soft_value_iteration(&optimized, true_reward, gamma, SOLVER_TOL)?;
    let quality = system_quality(&optimized, true_reward, gamma)?;
    Ok(IsoIteration {
        system: optimized,
        user_policy: adapted_user,
        quality,
    })
}

/// The six log-generation regimes of the tabular experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BehaviorType {
    /// Optimal-policy trajectories carrying true-reward scores.
    IrlLabelled,
    /// Optimal-policy trajectories, unscored.
    Optimal,
    /// Degraded behavior at a given noise factor.
    SubOptimal { noise_factor: f64, kind: NoiseKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Mix of optimal- and adversarial-policy trajectories (MB).
    MixedBehaviors,
    /// Per-step action noise away from the argmax (NB).
    NoisyActions,
}

impl BehaviorType {
    pub fn noise_factor(&self) -> f64 {
        match self {
            BehaviorType::SubOptimal { noise_factor, .. } => *noise_factor,
            _ => 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            BehaviorType::IrlLabelled => "IRL-labelled".into(),
            BehaviorType::Optimal => "Optimal".into(),
            BehaviorType::SubOptimal { noise_factor, kind } => {
                let kind = match kind {
                    NoiseKind::MixedBehaviors => "MB",
                    NoiseKind::NoisyActions => "NB",
                };
                format!("SubOptimal-{noise_factor}-{kind}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrlMethod {
    MaxEnt,
    DmIrl,
}

impl IrlMethod {
    pub fn label(&self) -> &'static str {
        match self {
            IrlMethod::MaxEnt => "maxent",
            IrlMethod::DmIrl => "dm-irl",
        }
    }
}

/// Knobs of one optimizer run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub gamma: f64,
    /// Trajectories per per-iteration log.
    pub log_size: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub maxent: MaxEntParams,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            log_size: 2_000,
            len_min: 30,
            len_max: 40,
            maxent: MaxEntParams::default(),
        }
    }
}

/// Per-iteration output of [`run_iso`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Weights produced by the recovery method; absent at iteration 0.
    pub recovered: Option<Vec<f64>>,
    /// Expected state value under the true reward.
    pub quality: f64,
    pub diagnostics: IterationDiagnostics,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub wall_ms: u64,
    /// Fingerprint of the serialized trajectory log the reward was learned
    /// from; absent at iteration 0.
    pub log_hash: Option<u64>,
    /// DM-IRL flagged a rank-deficient design.
    pub rank_deficient: bool,
}

/// Output of a full outer-loop run.
#[derive(Debug, Clone)]
pub struct IsoRun {
    pub records: Vec<IterationRecord>,
    pub final_system: TabularSystem,
    pub true_reward: RewardModel,
}

/// Full outer loop: per iteration, resample a fresh log under the current
/// system and configured behavior, recover the reward with the configured
/// method, optimize the system, and record the true-reward quality. The
/// record at index 0 is the initial system's quality, before any mutation.
pub fn run_iso(
    world_config: &WorldConfig,
    behavior: BehaviorType,
    irl_method: IrlMethod,
    n_iterations: usize,
    seed: u64,
    params: &RunParams,
) -> Result<IsoRun> {
    let mut system = sample_system(world_config)?;
    let true_reward = sample_reward(world_config)?;
    let gamma = params.gamma;

    let (_, mut user_policy) = soft_value_iteration(&system, &true_reward, gamma, SOLVER_TOL)?;
    let initial_quality = system_quality(&system, &true_reward, gamma)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        recovered: None,
        quality: initial_quality,
        diagnostics: IterationDiagnostics::default(),
    }];

    for iteration in 1..=n_iterations {
        let started = std::time::Instant::now();
        let log_seed = derive_seed(seed, iteration as u64);
        let log = generate_log(&system, &user_policy, behavior, &true_reward, log_seed, params)?;
        let log_hash = fnv1a64(crate::behavior::log_to_string(&log).as_bytes());

        let (recovered, rank_deficient) = match irl_method {
            IrlMethod::MaxEnt => {
                let reward = maxent_irl(&log, &system, &params.maxent).map_err(|e| {
                    CoreError::LearningFailure(format!("iteration {iteration}: {e}"))
                })?;
                (reward, false)
            }
            IrlMethod::DmIrl => {
                let scored = if log.iter().all(|t| t.score.is_some()) {
                    log.clone()
                } else {
                    score_trajectories(&log, &true_reward, gamma)
                };
                let fit = dm_irl(&scored, system.n_states(), gamma).map_err(|e| {
                    CoreError::LearningFailure(format!("iteration {iteration}: {e}"))
                })?;
                (fit.reward, fit.rank_deficient)
            }
        };

        // Weights are min-max rescaled before optimization to keep reward
        // scales comparable across iterations; argmax structure is unchanged.
        let step = iso_iteration(&system, &recovered.min_max_normalized(), &true_reward, gamma)
            .map_err(|e| CoreError::LearningFailure(format!("iteration {iteration}: {e}")))?;
        system = step.system;
        user_policy = step.user_policy;
        records.push(IterationRecord {
            iteration,
            recovered: Some(recovered.weights().to_vec()),
            quality: step.quality,
            diagnostics: IterationDiagnostics {
                wall_ms: started.elapsed().as_millis() as u64,
                log_hash: Some(log_hash),
                rank_deficient,
            },
        });
    }

    Ok(IsoRun {
        records,
        final_system: system,
        true_reward,
    })
}

fn generate_log(
    system: &TabularSystem,
    user_policy: &Policy,
    behavior: BehaviorType,
    true_reward: &RewardModel,
    seed: u64,
    params: &RunParams,
) -> Result<Vec<crate::mdp::Trajectory>> {
    let (count, lo, hi) = (params.log_size, params.len_min, params.len_max);
    match behavior {
        BehaviorType::IrlLabelled => {
            let log = sample_trajectories(system, user_policy, count, lo, hi, seed)?;
            Ok(score_trajectories(&log, true_reward, params.gamma))
        }
        BehaviorType::Optimal => sample_trajectories(system, user_policy, count, lo, hi, seed),
        BehaviorType::SubOptimal {
            noise_factor,
            kind: NoiseKind::MixedBehaviors,
        } => mix_behaviors(system, user_policy, noise_factor, count, lo, hi, seed),
        BehaviorType::SubOptimal {
            noise_factor,
            kind: NoiseKind::NoisyActions,
        } => {
            let noisy = noisy_policy(user_policy, noise_factor)?;
            sample_trajectories(system, &noisy.policy, count, lo, hi, seed)
        }
    }
}
