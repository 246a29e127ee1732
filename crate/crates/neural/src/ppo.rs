//! Clipped-surrogate PPO with generalized advantage estimation.
//!
//! One update cycle: roll out whole episodes until the step budget is met,
//! bootstrap values at the horizon cut, compute GAE, then run several epochs
//! of minibatch updates on the clipped objective with an entropy bonus. The
//! critic is a separate value network trained by MSE. All sampling comes
//! from the caller's RNG, so a fixed seed fixes the whole trace.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::env::Environment;
use crate::error::{NeuralError, Result};
use crate::mlp::{Adam, Mlp};
use crate::policy::StochasticPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Rollout budget per update; rounded up to whole episodes.
    pub batch_steps: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    /// Number of rollout/update cycles.
    pub updates: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            batch_steps: 2048,
            minibatch: 256,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            updates: 20,
        }
    }
}

/// Training diagnostics. `clip_fraction_ok` is the fraction of post-update
/// probability ratios that stayed inside `[1 - clip, 1 + clip]`, averaged
/// over updates.
#[derive(Debug, Clone, Default)]
pub struct PpoReport {
    pub batch_mean_returns: Vec<f64>,
    pub clip_fraction_ok: f64,
    pub final_mean_return: f64,
}

/// Hook recomputing a transition's reward after collection; receives
/// (obs, action, next_obs, logp_behavior).
pub type RewardOverride<'a, A> = &'a dyn Fn(&Array1<f64>, &A, &Array1<f64>, f64) -> f64;

/// Anchor regularization: adds `weight * mean KL(policy || anchor)` over each
/// minibatch to the policy loss, with analytic gradients (the PPO-penalty
/// form of a trust region toward a frozen reference).
pub struct KlAnchor<'a, P> {
    pub anchor: &'a P,
    pub weight: f64,
}

struct Batch<A> {
    obs: Vec<Array1<f64>>,
    actions: Vec<A>,
    logp: Vec<f64>,
    rewards: Vec<f64>,
    /// Exclusive end indices of episodes within the flat arrays.
    episode_ends: Vec<usize>,
    /// Bootstrap observation per episode (the state after the horizon cut).
    bootstrap_obs: Vec<Array1<f64>>,
    mean_return: f64,
}

fn collect_batch<P, E>(
    policy: &P,
    env: &mut E,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
    reward_override: Option<RewardOverride<'_, P::Action>>,
) -> Batch<P::Action>
where
    P: StochasticPolicy,
    E: Environment<Action = P::Action>,
{
    let horizon = env.horizon();
    let episodes = cfg.batch_steps.div_ceil(horizon);
    let capacity = episodes * horizon;
    let mut batch = Batch {
        obs: Vec::with_capacity(capacity),
        actions: Vec::with_capacity(capacity),
        logp: Vec::with_capacity(capacity),
        rewards: Vec::with_capacity(capacity),
        episode_ends: Vec::with_capacity(episodes),
        bootstrap_obs: Vec::with_capacity(episodes),
        mean_return: 0.0,
    };
    let mut total_return = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut episode_return = 0.0;
        for _ in 0..horizon {
            let (action, logp) = policy.act(&obs, rng);
            let (next_obs, env_reward) = env.step(&action, rng);
            let reward = match reward_override {
                Some(hook) => hook(&obs, &action, &next_obs, logp),
                None => env_reward,
            };
            episode_return += reward;
            batch.obs.push(obs);
            batch.actions.push(action);
            batch.logp.push(logp);
            batch.rewards.push(reward);
            obs = next_obs;
        }
        batch.episode_ends.push(batch.obs.len());
        batch.bootstrap_obs.push(obs);
        total_return += episode_return;
    }
    batch.mean_return = total_return / episodes as f64;
    batch
}

fn stack(rows: &[Array1<f64>]) -> Array2<f64> {
    let dim = rows[0].len();
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        out.row_mut(i).assign(row);
    }
    out
}

/// GAE over whole truncated episodes, bootstrapping the value of the state
/// beyond the cut. Returns (advantages, value targets).
fn gae(
    batch_values: &Array1<f64>,
    bootstrap_values: &Array1<f64>,
    batch: &Batch<impl Clone>,
    cfg: &PpoConfig,
) -> (Array1<f64>, Array1<f64>) {
    let n = batch.rewards.len();
    let mut advantages = Array1::zeros(n);
    let mut start = 0;
    for (ep, &end) in batch.episode_ends.iter().enumerate() {
        let mut running = 0.0;
        for t in (start..end).rev() {
            let next_value = if t + 1 == end {
                bootstrap_values[ep]
            } else {
                batch_values[t + 1]
            };
            let delta = batch.rewards[t] + cfg.gamma * next_value - batch_values[t];
            running = delta + cfg.gamma * cfg.gae_lambda * running;
            advantages[t] = running;
        }
        start = end;
    }
    let targets = &advantages + batch_values;
    (advantages, targets)
}

fn normalized(advantages: &Array1<f64>) -> Array1<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.sum() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    advantages.mapv(|a| (a - mean) / std)
}

/// Runs `cfg.updates` PPO cycles on `policy` (and the value net `critic`)
/// against `env`. Fails with the last finite parameters if a gradient or
/// loss turns non-finite.
pub fn ppo_optimize<P, E>(
    policy: &mut P,
    critic: &mut Mlp,
    env: &mut E,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
    reward_override: Option<RewardOverride<'_, P::Action>>,
    kl_anchor: Option<KlAnchor<'_, P>>,
) -> Result<PpoReport>
where
    P: StochasticPolicy,
    E: Environment<Action = P::Action>,
{
    let mut policy_adam = Adam::new(policy.net(), cfg.learning_rate);
    let mut critic_adam = Adam::new(critic, cfg.learning_rate);
    let mut report = PpoReport::default();
    let mut clip_ok_acc = 0.0;

    for _ in 0..cfg.updates {
        let batch = collect_batch(policy, env, cfg, rng, reward_override);
        report.batch_mean_returns.push(batch.mean_return);

        let obs_matrix = stack(&batch.obs);
        let bootstrap_matrix = stack(&batch.bootstrap_obs);
        let values = critic.forward_batch(&obs_matrix).column(0).to_owned();
        let bootstrap_values = critic.forward_batch(&bootstrap_matrix).column(0).to_owned();
        let (advantages, targets) = gae(&values, &bootstrap_values, &batch, cfg);
        let advantages = normalized(&advantages);
        let logp_old = Array1::from_vec(batch.logp.clone());

        let n = batch.obs.len();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            shuffle(&mut order, rng);
            for chunk in order.chunks(cfg.minibatch) {
                let mb_obs = stack(&gather(&batch.obs, chunk));
                let mb_actions: Vec<P::Action> =
                    chunk.iter().map(|&i| batch.actions[i].clone()).collect();
                let (logp_new, _entropy) = policy.evaluate(&mb_obs, &mb_actions);
                let m = chunk.len() as f64;

                // Clipped surrogate: grad flows through logp only where the
                // unclipped branch attains the min.
                let mut dlogp = Array1::zeros(chunk.len());
                let dent = Array1::from_elem(chunk.len(), -cfg.entropy_coef / m);
                for (row, &i) in chunk.iter().enumerate() {
                    let ratio = (logp_new[row] - logp_old[i]).exp();
                    let adv = advantages[i];
                    let unclipped = ratio * adv;
                    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
                    if unclipped <= clipped {
                        dlogp[row] = -unclipped / m;
                    }
                }
                let mut grads = policy.backward(&mb_obs, &mb_actions, &dlogp, &dent);
                if let Some(KlAnchor { anchor, weight }) = &kl_anchor {
                    let (_, kl_grads) = policy
                        .anchor_kl_backward(&mb_obs, anchor, *weight)
                        .expect("policy does not support an anchor penalty");
                    grads.add(&kl_grads);
                }
                if !grads.is_finite() {
                    return Err(training_failure("policy gradient turned non-finite", policy.net()));
                }
                policy_adam.step(policy.net_mut(), &grads);

                // Critic: 0.5 * MSE against the GAE targets.
                let (v, cache) = critic.forward_cached(&mb_obs);
                let mut dv = Array2::zeros(v.dim());
                for (row, &i) in chunk.iter().enumerate() {
                    dv[[row, 0]] = (v[[row, 0]] - targets[i]) / m;
                }
                let (critic_grads, _) = critic.backward(&cache, &dv);
                if !critic_grads.is_finite() {
                    return Err(training_failure("critic gradient turned non-finite", critic));
                }
                critic_adam.step(critic, &critic_grads);
            }
        }

        // Post-update ratio diagnostic over the whole batch.
        let (logp_post, _) = policy.evaluate(&obs_matrix, &batch.actions);
        let ok = logp_post
            .iter()
            .zip(logp_old.iter())
            .filter(|(new, old)| {
                let ratio = (*new - *old).exp();
                ratio >= 1.0 - cfg.clip && ratio <= 1.0 + cfg.clip
            })
            .count();
        clip_ok_acc += ok as f64 / n as f64;
    }

    report.clip_fraction_ok = clip_ok_acc / cfg.updates.max(1) as f64;
    report.final_mean_return = report.batch_mean_returns.last().copied().unwrap_or(0.0);
    Ok(report)
}

fn training_failure(reason: &str, last_good: &Mlp) -> NeuralError {
    NeuralError::TrainingFailure {
        reason: reason.into(),
        checkpoint: Box::new(last_good.clone()),
    }
}

fn gather(rows: &[Array1<f64>], idx: &[usize]) -> Vec<Array1<f64>> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
