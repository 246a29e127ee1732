//! Property tests over randomly sampled worlds: stochasticity and support
//! preservation, enumeration normalization, and the behavior-layer algebra.

use iso_core::behavior::{
    adversarial_policy, noisy_policy, sample_trajectories, score_trajectories,
};
use iso_core::iso::{build_mdp_plus, extract_transition, solve_mdp_plus, SOLVER_TOL};
use iso_core::mdp::{soft_value_iteration, Policy, RewardModel};
use iso_core::oracle::enumerate_returns;
use iso_core::world::{sample_reward, sample_system, WorldConfig};
use ndarray::Array1;
use proptest::prelude::*;

fn arb_world() -> impl Strategy<Value = WorldConfig> {
    (2usize..7, 1usize..4, 0u64..10_000).prop_flat_map(|(n_states, n_actions, seed)| {
        (1usize..=n_states).prop_map(move |connection_factor| WorldConfig {
            n_states,
            n_actions,
            connection_factor,
            reward_fraction: 0.5,
            seed,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_worlds_satisfy_all_invariants(config in arb_world()) {
        let system = sample_system(&config).unwrap();
        system.validate().unwrap();
        let reward = sample_reward(&config).unwrap();
        prop_assert!(reward.weights().iter().all(|w| *w == 0.0 || *w == 1.0));
    }

    #[test]
    fn soft_vi_policies_are_row_stochastic(config in arb_world()) {
        let system = sample_system(&config).unwrap();
        let reward = sample_reward(&config).unwrap();
        let (_, policy) = soft_value_iteration(&system, &reward, 0.9, 1e-9).unwrap();
        for row in policy.probs().outer_iter() {
            let total: f64 = row.sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn optimized_transition_stays_on_the_graph(config in arb_world()) {
        let system = sample_system(&config).unwrap();
        let reward = sample_reward(&config).unwrap();
        let (_, user) = soft_value_iteration(&system, &reward, 0.9, 1e-9).unwrap();
        let plus = build_mdp_plus(&system, &user, &reward, 0.9).unwrap();
        let pi_plus = solve_mdp_plus(&plus, SOLVER_TOL).unwrap();
        let optimized = extract_transition(&pi_plus, &system).unwrap();
        optimized.validate().unwrap();
        // Support preservation, stated directly: positive mass only on edges.
        for s in 0..config.n_states {
            for a in 0..config.n_actions {
                for next in 0..config.n_states {
                    if optimized.transition_prob(s, a, next) > 0.0 {
                        prop_assert!(system.allowed(s, a).contains(&next));
                    }
                }
            }
        }
    }

    #[test]
    fn enumeration_weights_normalize(config in arb_world()) {
        let system = sample_system(&config).unwrap();
        let reward = sample_reward(&config).unwrap();
        let policy = Policy::uniform(config.n_states, config.n_actions);
        if let Ok(all) = enumerate_returns(&system, &policy, &reward, 0.9, 3) {
            let total: f64 = all.iter().map(|(_, w, _)| w).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_trajectories_respect_connectivity(config in arb_world(), traj_seed in 0u64..1000) {
        let system = sample_system(&config).unwrap();
        let policy = Policy::uniform(config.n_states, config.n_actions);
        let trajs = sample_trajectories(&system, &policy, 20, 2, 5, traj_seed).unwrap();
        for traj in &trajs {
            traj.validate(&system, 2, 5).unwrap();
        }
    }

    #[test]
    fn adversarial_rows_are_one_hot_at_the_argmin(config in arb_world()) {
        let system = sample_system(&config).unwrap();
        let reward = sample_reward(&config).unwrap();
        let (_, policy) = soft_value_iteration(&system, &reward, 0.9, 1e-9).unwrap();
        let adv = adversarial_policy(&policy);
        for s in 0..config.n_states {
            let chosen = adv.argmax(s);
            prop_assert_eq!(adv.prob(s, chosen), 1.0);
            for a in 0..config.n_actions {
                prop_assert!(policy.prob(s, chosen) <= policy.prob(s, a));
            }
        }
    }

    #[test]
    fn noisy_policy_rows_are_stochastic(config in arb_world(), nf in 0.0f64..=1.0) {
        let system = sample_system(&config).unwrap();
        let reward = sample_reward(&config).unwrap();
        let (_, policy) = soft_value_iteration(&system, &reward, 0.9, 1e-9).unwrap();
        let noisy = noisy_policy(&policy, nf).unwrap();
        for row in noisy.policy.probs().outer_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scoring_is_additive_in_the_weights(
        config in arb_world(),
        w1 in proptest::collection::vec(-2.0f64..2.0, 2..7),
    ) {
        let mut config = config;
        config.n_states = w1.len();
        config.connection_factor = config.connection_factor.min(config.n_states);
        let system = sample_system(&config).unwrap();
        let policy = Policy::uniform(config.n_states, config.n_actions);
        let trajs = sample_trajectories(&system, &policy, 5, 2, 4, 3).unwrap();
        let r1 = RewardModel::new(Array1::from_vec(w1.clone())).unwrap();
        let r2 = RewardModel::new(Array1::from_iter(w1.iter().map(|w| 1.0 - w))).unwrap();
        let sum = RewardModel::new(r1.weights() + r2.weights()).unwrap();
        let s1 = score_trajectories(&trajs, &r1, 0.9);
        let s2 = score_trajectories(&trajs, &r2, 0.9);
        let s12 = score_trajectories(&trajs, &sum, 0.9);
        for i in 0..trajs.len() {
            let lhs = s12[i].score.unwrap();
            let rhs = s1[i].score.unwrap() + s2[i].score.unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
