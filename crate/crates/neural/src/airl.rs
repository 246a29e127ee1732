//! Adversarial reward recovery.
//!
//! A discriminator distinguishes expert from policy transitions through the
//! structured logit `f(s, s') - log pi(a|s)` with
//! `f(s, s') = g(s) + gamma h(s') - h(s)`; the state-only `g` is the
//! recovered reward. The generator policy trains with PPO against the
//! discriminator confusion reward `f - log pi`, and is returned as the
//! rebuilt user policy.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{EpisodeTrace, RewardFn, UserEnv};
use crate::error::{NeuralError, Result};
use crate::mlp::{Activation, Adam, Init, Mlp};
use crate::policy::{CategoricalPolicy, GaussianPolicy};
use crate::ppo::{ppo_optimize, PpoConfig};
use crate::system::HIDDEN;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirlConfig {
    /// Alternating discriminator/generator rounds.
    pub rounds: usize,
    /// Discriminator minibatches per round.
    pub disc_batches: usize,
    pub disc_minibatch: usize,
    pub disc_learning_rate: f64,
    /// Discount used inside the shaping term f = g(s) + gamma h(s') - h(s).
    pub gamma: f64,
    /// Generator PPO settings; `updates` is per round.
    pub ppo: PpoConfig,
}

impl Default for AirlConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            disc_batches: 16,
            disc_minibatch: 128,
            disc_learning_rate: 3e-4,
            gamma: 0.99,
            ppo: PpoConfig {
                updates: 1,
                ..PpoConfig::default()
            },
        }
    }
}

/// Output of adversarial training: the recovered state-only reward, its
/// shaping term, the rebuilt user policy, and per-round diagnostics.
#[derive(Debug, Clone)]
pub struct AirlState {
    pub reward_net: Mlp,
    pub shaping_net: Mlp,
    pub policy: CategoricalPolicy,
    pub critic: Mlp,
    pub diagnostics: AirlDiagnostics,
}

#[derive(Debug, Clone, Default)]
pub struct AirlDiagnostics {
    /// Discriminator accuracy per round, measured before its update.
    pub disc_accuracy: Vec<f64>,
    /// Generator mean episode return (confusion reward) per round.
    pub generator_returns: Vec<f64>,
}

impl AirlState {
    pub fn recovered_reward(&self, state: &Array1<f64>) -> f64 {
        self.reward_net.forward(state)[0]
    }
}

/// Watches discriminator accuracies for degenerate pinning: a full window at
/// essentially perfect separation (the generator receives no signal), or a
/// full window frozen at exactly the coin-flip level (a dead discriminator).
/// Healthy convergence hovers near 0.5 with visible fluctuation and does not
/// trip this.
#[derive(Debug, Default)]
pub struct ModeCollapseMonitor {
    history: Vec<f64>,
}

impl ModeCollapseMonitor {
    pub const WINDOW: usize = 10;

    pub fn observe(&mut self, accuracy: f64) -> Option<String> {
        self.history.push(accuracy);
        if self.history.len() < Self::WINDOW {
            return None;
        }
        let window = &self.history[self.history.len() - Self::WINDOW..];
        if window.iter().all(|&a| a >= 0.995) {
            return Some(format!(
                "discriminator pinned at accuracy >= 0.995 for {} rounds",
                Self::WINDOW
            ));
        }
        let spread = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - window.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread < 1e-9 && (window[0] - 0.5).abs() < 0.002 {
            return Some(format!(
                "discriminator frozen at accuracy {:.4} for {} rounds",
                window[0],
                Self::WINDOW
            ));
        }
        None
    }
}

/// A transition sample for the discriminator.
struct Sample {
    state: Array1<f64>,
    action: usize,
    next_state: Array1<f64>,
}

fn flatten_transitions(episodes: &[EpisodeTrace]) -> Vec<Sample> {
    episodes
        .iter()
        .flat_map(|ep| {
            ep.transitions().map(|(s, a, sn)| Sample {
                state: s.clone(),
                action: a,
                next_state: sn.clone(),
            })
        })
        .collect()
}

/// Trains the adversarial pair against expert demonstrations collected on a
/// frozen system. `expert` episodes must be non-empty.
pub fn airl_train(
    expert: &[EpisodeTrace],
    system_policy: &GaussianPolicy,
    state_dim: usize,
    n_actions: usize,
    cfg: &AirlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AirlState> {
    if expert.is_empty() {
        return Err(NeuralError::InvalidConfig("no expert episodes".into()));
    }
    let expert_samples = flatten_transitions(expert);

    let mut reward_net = Mlp::new(
        &[state_dim, HIDDEN, HIDDEN, 1],
        Activation::Tanh,
        Init::Xavier,
        rng,
    );
    let mut shaping_net = Mlp::new(
        &[state_dim, HIDDEN, HIDDEN, 1],
        Activation::Tanh,
        Init::Xavier,
        rng,
    );
    let mut policy = CategoricalPolicy::new(Mlp::new(
        &[state_dim, HIDDEN, HIDDEN, n_actions],
        Activation::Tanh,
        Init::Xavier,
        rng,
    ));
    let mut critic = Mlp::new(
        &[state_dim, HIDDEN, HIDDEN, 1],
        Activation::Tanh,
        Init::Xavier,
        rng,
    );
    let mut g_adam = Adam::new(&reward_net, cfg.disc_learning_rate);
    let mut h_adam = Adam::new(&shaping_net, cfg.disc_learning_rate);

    let mut diagnostics = AirlDiagnostics::default();
    let mut monitor = ModeCollapseMonitor::default();

    for _round in 0..cfg.rounds {
        // Fresh generator transitions under the current policy.
        let generator_episodes = crate::env::rollout_user_episodes(
            system_policy,
            &policy,
            state_dim,
            n_actions,
            cfg.ppo.batch_steps.div_ceil(crate::env::EPISODE_HORIZON),
            crate::env::EPISODE_HORIZON,
            rng,
        );
        let generator_samples = flatten_transitions(&generator_episodes);

        // Accuracy before updating, on balanced fresh draws.
        let accuracy = discriminator_accuracy(
            &reward_net,
            &shaping_net,
            &policy,
            &expert_samples,
            &generator_samples,
            cfg,
            rng,
        );
        diagnostics.disc_accuracy.push(accuracy);
        if let Some(reason) = monitor.observe(accuracy) {
            return Err(NeuralError::ModeCollapse(reason));
        }

        // Discriminator epochs: balanced expert/generator minibatches.
        for _ in 0..cfg.disc_batches {
            let (loss_ok, ()) = disc_update(
                &mut reward_net,
                &mut shaping_net,
                &mut g_adam,
                &mut h_adam,
                &policy,
                &expert_samples,
                &generator_samples,
                cfg,
                rng,
            );
            if !loss_ok {
                return Err(NeuralError::TrainingFailure {
                    reason: "discriminator loss turned non-finite".into(),
                    checkpoint: Box::new(reward_net.clone()),
                });
            }
        }

        // Generator: PPO against the confusion reward f - log pi.
        let reward_net_ref = &reward_net;
        let shaping_net_ref = &shaping_net;
        let gamma = cfg.gamma;
        let confusion =
            move |s: &Array1<f64>, _a: &usize, sn: &Array1<f64>, logp: f64| -> f64 {
                reward_net_ref.forward(s)[0] + gamma * shaping_net_ref.forward(sn)[0]
                    - shaping_net_ref.forward(s)[0]
                    - logp
            };
        let mut env = UserEnv::new(
            system_policy,
            RewardFn::Net(&reward_net),
            state_dim,
            n_actions,
        );
        let report = ppo_optimize(
            &mut policy,
            &mut critic,
            &mut env,
            &cfg.ppo,
            rng,
            Some(&confusion),
            None,
        )?;
        diagnostics
            .generator_returns
            .push(report.final_mean_return);
    }

    Ok(AirlState {
        reward_net,
        shaping_net,
        policy,
        critic,
        diagnostics,
    })
}

fn disc_logits(
    reward_net: &Mlp,
    shaping_net: &Mlp,
    policy: &CategoricalPolicy,
    samples: &[&Sample],
    gamma: f64,
) -> (Array1<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let states = stack(samples.iter().map(|s| &s.state));
    let next_states = stack(samples.iter().map(|s| &s.next_state));
    let g = reward_net.forward_batch(&states);
    let h = shaping_net.forward_batch(&states);
    let h_next = shaping_net.forward_batch(&next_states);
    let policy_logp = {
        let logits = policy.net.forward_batch(&states);
        Array1::from_iter(samples.iter().enumerate().map(|(i, s)| {
            let row = logits.row(i);
            let lse = crate::policy::log_sum_exp(row.as_slice().unwrap());
            row[s.action] - lse
        }))
    };
    let logits = Array1::from_iter(
        (0..samples.len())
            .map(|i| g[[i, 0]] + gamma * h_next[[i, 0]] - h[[i, 0]] - policy_logp[i]),
    );
    (logits, states, next_states, policy_logp.insert_axis(ndarray::Axis(1)))
}

fn stack<'a>(rows: impl Iterator<Item = &'a Array1<f64>>) -> Array2<f64> {
    let rows: Vec<&Array1<f64>> = rows.collect();
    let mut out = Array2::zeros((rows.len(), rows[0].len()));
    for (i, row) in rows.iter().enumerate() {
        out.row_mut(i).assign(*row);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn disc_update(
    reward_net: &mut Mlp,
    shaping_net: &mut Mlp,
    g_adam: &mut Adam,
    h_adam: &mut Adam,
    policy: &CategoricalPolicy,
    expert: &[Sample],
    generator: &[Sample],
    cfg: &AirlConfig,
    rng: &mut ChaCha8Rng,
) -> (bool, ()) {
    let half = cfg.disc_minibatch / 2;
    let expert_mb: Vec<&Sample> = (0..half)
        .map(|_| &expert[rng.random_range(0..expert.len())])
        .collect();
    let generator_mb: Vec<&Sample> = (0..half)
        .map(|_| &generator[rng.random_range(0..generator.len())])
        .collect();

    let mut all: Vec<&Sample> = expert_mb;
    all.extend(generator_mb);
    let labels: Vec<f64> = (0..all.len())
        .map(|i| if i < half { 1.0 } else { 0.0 })
        .collect();

    let (logits, states, next_states, _) =
        disc_logits(reward_net, shaping_net, policy, &all, cfg.gamma);
    if logits.iter().any(|l| !l.is_finite()) {
        return (false, ());
    }

    // Binary cross-entropy; dLoss/dlogit = sigmoid(logit) - label.
    let m = all.len() as f64;
    let dlogit =
        Array1::from_iter(logits.iter().zip(labels.iter()).map(|(&l, &y)| {
            (crate::policy::sigmoid(l) - y) / m
        }));

    // f = g(s) + gamma h(s') - h(s): route the logit gradient to each net.
    let dcol = dlogit.clone().insert_axis(ndarray::Axis(1));
    let (_, g_cache) = reward_net.forward_cached(&states);
    let (g_grads, _) = reward_net.backward(&g_cache, &dcol);

    let (_, h_cache) = shaping_net.forward_cached(&states);
    let (mut h_grads, _) = shaping_net.backward(&h_cache, &dcol.mapv(|d| -d));
    let (_, hn_cache) = shaping_net.forward_cached(&next_states);
    let (hn_grads, _) = shaping_net.backward(&hn_cache, &dcol.mapv(|d| cfg.gamma * d));
    h_grads.add(&hn_grads);

    if !g_grads.is_finite() || !h_grads.is_finite() {
        return (false, ());
    }
    g_adam.step(reward_net, &g_grads);
    h_adam.step(shaping_net, &h_grads);
    (true, ())
}

#[allow(clippy::too_many_arguments)]
fn discriminator_accuracy(
    reward_net: &Mlp,
    shaping_net: &Mlp,
    policy: &CategoricalPolicy,
    expert: &[Sample],
    generator: &[Sample],
    cfg: &AirlConfig,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n = 256.min(expert.len()).min(generator.len());
    let expert_mb: Vec<&Sample> = (0..n)
        .map(|_| &expert[rng.random_range(0..expert.len())])
        .collect();
    let generator_mb: Vec<&Sample> = (0..n)
        .map(|_| &generator[rng.random_range(0..generator.len())])
        .collect();
    let (expert_logits, ..) = disc_logits(reward_net, shaping_net, policy, &expert_mb, cfg.gamma);
    let (generator_logits, ..) =
        disc_logits(reward_net, shaping_net, policy, &generator_mb, cfg.gamma);
    let correct = expert_logits.iter().filter(|&&l| l > 0.0).count()
        + generator_logits.iter().filter(|&&l| l <= 0.0).count();
    correct as f64 / (2 * n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn mode_collapse_monitor_flags_pinned_windows() {
        let mut m = ModeCollapseMonitor::default();
        for _ in 0..9 {
            assert!(m.observe(1.0).is_none());
        }
        assert!(m.observe(1.0).is_some());

        let mut m = ModeCollapseMonitor::default();
        for _ in 0..10 {
            if m.observe(0.5).is_some() {
                return;
            }
        }
        panic!("frozen coin-flip discriminator must be flagged");
    }

    #[test]
    fn mode_collapse_monitor_accepts_healthy_fluctuation() {
        let mut m = ModeCollapseMonitor::default();
        let wobble = [0.48, 0.52, 0.55, 0.47, 0.51, 0.49, 0.53, 0.50, 0.46, 0.54, 0.52, 0.48];
        for a in wobble {
            assert!(m.observe(a).is_none(), "healthy accuracy {a} flagged");
        }
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(xs: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
            let mut out = vec![0.0; xs.len()];
            for (rank, &i) in idx.iter().enumerate() {
                out[i] = rank as f64;
            }
            out
        }
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (ra[i] - mean) * (rb[i] - mean);
            va += (ra[i] - mean) * (ra[i] - mean);
            vb += (rb[i] - mean) * (rb[i] - mean);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(tag.into());
        rng
    }

    #[test]
    fn random_expert_leaves_discriminator_near_chance_and_reward_flat() {
        use crate::env::rollout_user_episodes;
        use crate::system::{NeuralSystem, RewardKind};
        let system = NeuralSystem::new(4, 3, RewardKind::Handcrafted, 51);
        // The "expert" is an untrained policy: indistinguishable players.
        let random_user = CategoricalPolicy::new(Mlp::new(
            &[4, 64, 64, 3],
            Activation::Tanh,
            Init::Xavier,
            &mut stream(1, 0),
        ));
        let expert = rollout_user_episodes(
            &system.system_policy,
            &random_user,
            4,
            3,
            150,
            crate::env::EPISODE_HORIZON,
            &mut stream(2, 0),
        );
        let cfg = AirlConfig {
            rounds: 8,
            ppo: crate::ppo::PpoConfig {
                batch_steps: 512,
                updates: 1,
                ..crate::ppo::PpoConfig::default()
            },
            ..AirlConfig::default()
        };
        let state = airl_train(&expert, &system.system_policy, 4, 3, &cfg, &mut stream(3, 0)).unwrap();
        let tail = &state.diagnostics.disc_accuracy[state.diagnostics.disc_accuracy.len() - 4..];
        let mean_acc = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(
            (0.35..0.8).contains(&mean_acc),
            "discriminator accuracy {mean_acc} far from chance for indistinguishable players"
        );
        // No signal to extract: the recovered reward neither tracks the true
        // one nor varies meaningfully across the bulk of visited states
        // (interquartile spread, which ignores memorization outliers).
        let visited: Vec<Array1<f64>> = expert
            .iter()
            .flat_map(|ep| ep.states.iter().cloned())
            .take(2_000)
            .collect();
        let recovered: Vec<f64> = visited.iter().map(|s| state.recovered_reward(s)).collect();
        let real: Vec<f64> = visited.iter().map(|s| system.true_reward.eval(s)).collect();
        let rho = spearman(&recovered, &real);
        assert!(rho.abs() < 0.35, "uninformative expert produced rank correlation {rho}");
        let iqr = |values: &[f64]| {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted[values.len() * 3 / 4] - sorted[values.len() / 4]
        };
        assert!(
            iqr(&recovered) < 0.2 * real.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            "recovered-reward bulk spread {} not flat against true scale {}",
            iqr(&recovered),
            real.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        );
    }

    #[test]
    fn recovered_reward_ranks_states_like_the_true_one() {
        use crate::env::{rollout_user_episodes, RewardFn};
        use crate::sandbox::train_user_policy;
        use crate::system::{NeuralSystem, RewardKind};
        let system = NeuralSystem::new(6, 4, RewardKind::Handcrafted, 53);
        let (expert_policy, _) = train_user_policy(
            &system,
            RewardFn::True(&system.true_reward),
            &crate::ppo::PpoConfig {
                batch_steps: 1024,
                updates: 10,
                ..crate::ppo::PpoConfig::default()
            },
            &mut stream(4, 0),
        )
        .unwrap();
        let expert = rollout_user_episodes(
            &system.system_policy,
            &expert_policy,
            6,
            4,
            250,
            crate::env::EPISODE_HORIZON,
            &mut stream(5, 0),
        );
        let cfg = AirlConfig {
            rounds: 15,
            ppo: crate::ppo::PpoConfig {
                batch_steps: 1024,
                updates: 1,
                ..crate::ppo::PpoConfig::default()
            },
            ..AirlConfig::default()
        };
        let state = airl_train(&expert, &system.system_policy, 6, 4, &cfg, &mut stream(6, 0)).unwrap();
        // Rank correlation against the known formula over 10^4 visited states.
        let visited: Vec<Array1<f64>> = expert
            .iter()
            .flat_map(|ep| ep.states.iter().cloned())
            .take(10_000)
            .collect();
        let recovered: Vec<f64> = visited.iter().map(|s| state.recovered_reward(s)).collect();
        let real: Vec<f64> = visited.iter().map(|s| system.true_reward.eval(s)).collect();
        let rho = spearman(&recovered, &real);
        assert!(rho > 0.5, "rank correlation {rho}");
    }

    #[test]
    fn rebuilt_policy_reaches_most_of_the_expert_return() {
        use crate::env::{rollout_user_episodes, RewardFn};
        use crate::sandbox::{average_return, train_user_policy};
        use crate::system::{NeuralSystem, RewardKind};
        let mut expert_total = 0.0;
        let mut rebuilt_total = 0.0;
        for seed in 0..5u64 {
            let system = NeuralSystem::new(4, 3, RewardKind::Handcrafted, 200 + seed);
            let (expert_policy, _) = train_user_policy(
                &system,
                RewardFn::True(&system.true_reward),
                &crate::ppo::PpoConfig {
                    batch_steps: 1024,
                    updates: 8,
                    ..crate::ppo::PpoConfig::default()
                },
                &mut stream(seed, 10),
            )
            .unwrap();
            let expert = rollout_user_episodes(
                &system.system_policy,
                &expert_policy,
                4,
                3,
                200,
                crate::env::EPISODE_HORIZON,
                &mut stream(seed, 11),
            );
            let cfg = AirlConfig {
                rounds: 12,
                ppo: crate::ppo::PpoConfig {
                    batch_steps: 1024,
                    updates: 1,
                    ..crate::ppo::PpoConfig::default()
                },
                ..AirlConfig::default()
            };
            let state =
                airl_train(&expert, &system.system_policy, 4, 3, &cfg, &mut stream(seed, 12))
                    .unwrap();
            let (expert_return, _) = average_return(
                &system,
                &expert_policy,
                &RewardFn::True(&system.true_reward),
                200,
                &mut stream(seed, 13),
            );
            let (rebuilt_return, _) = average_return(
                &system,
                &state.policy,
                &RewardFn::True(&system.true_reward),
                200,
                &mut stream(seed, 13),
            );
            expert_total += expert_return;
            rebuilt_total += rebuilt_return;
        }
        assert!(
            rebuilt_total >= 0.7 * expert_total,
            "rebuilt mean return {rebuilt_total:.2} below 70% of expert {expert_total:.2} (5-seed sums)"
        );
    }

    #[test]
    fn discriminator_learns_to_separate_disjoint_data() {
        // Expert transitions live around +2, generator around -2; a few
        // discriminator updates must push accuracy well above chance.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let dim = 3;
        let mk = |center: f64, rng: &mut ChaCha8Rng| -> Vec<Sample> {
            (0..256)
                .map(|_| Sample {
                    state: Array1::from_shape_fn(dim, |_| center + rng.random_range(-0.5..0.5)),
                    action: rng.random_range(0..4),
                    next_state: Array1::from_shape_fn(dim, |_| {
                        center + rng.random_range(-0.5..0.5)
                    }),
                })
                .collect()
        };
        let expert = mk(2.0, &mut rng);
        let generator = mk(-2.0, &mut rng);
        let cfg = AirlConfig::default();
        let mut reward_net = Mlp::new(&[dim, 32, 1], Activation::Tanh, Init::Xavier, &mut rng);
        let mut shaping_net = Mlp::new(&[dim, 32, 1], Activation::Tanh, Init::Xavier, &mut rng);
        let policy = CategoricalPolicy::new(Mlp::new(
            &[dim, 16, 4],
            Activation::Tanh,
            Init::Xavier,
            &mut rng,
        ));
        let mut g_adam = Adam::new(&reward_net, 1e-2);
        let mut h_adam = Adam::new(&shaping_net, 1e-2);
        for _ in 0..200 {
            disc_update(
                &mut reward_net,
                &mut shaping_net,
                &mut g_adam,
                &mut h_adam,
                &policy,
                &expert,
                &generator,
                &cfg,
                &mut rng,
            );
        }
        let acc = discriminator_accuracy(
            &reward_net,
            &shaping_net,
            &policy,
            &expert,
            &generator,
            &cfg,
            &mut rng,
        );
        assert!(acc > 0.95, "accuracy {acc}");
        // And the recovered reward ranks expert states above generator ones.
        let g_expert = reward_net.forward(&expert[0].state)[0];
        let g_generator = reward_net.forward(&generator[0].state)[0];
        assert!(g_expert > g_generator);
    }
}
