//! Scratch probe: monotonicity of quality sequences under different choices
//! of the modeled-user policy (soft vs hard) and evaluation policy.

use iso_core::iso::{build_mdp_plus, extract_transition, solve_mdp_plus, SOLVER_TOL};
use iso_core::mdp::{
    expected_state_value, policy_value, soft_value_iteration, Policy, RewardModel, TabularSystem,
};
use iso_core::world::{sample_reward, sample_system, WorldConfig};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

/// Plain hard value iteration; returns (V*, greedy policy).
fn hard_vi(system: &TabularSystem, reward: &RewardModel, gamma: f64) -> (Array1<f64>, Policy) {
    let n = system.n_states();
    let n_actions = system.n_actions();
    let mut v = Array1::<f64>::zeros(n);
    loop {
        let mut next = Array1::<f64>::zeros(n);
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                let mut acc = 0.0;
                for &sn in system.allowed(s, a) {
                    acc += system.transition_prob(s, a, sn) * v[sn];
                }
                best = best.max(reward.reward(s) + gamma * acc);
            }
            next[s] = best;
        }
        let delta = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < SOLVER_TOL {
            break;
        }
    }
    let mut probs = Array2::zeros((n, n_actions));
    for s in 0..n {
        let mut best_a = 0;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..n_actions {
            let mut acc = 0.0;
            for &sn in system.allowed(s, a) {
                acc += system.transition_prob(s, a, sn) * v[sn];
            }
            let q = reward.reward(s) + gamma * acc;
            if q > best_q {
                best_q = q;
                best_a = a;
            }
        }
        probs[[s, best_a]] = 1.0;
    }
    (v, Policy::new(probs).unwrap())
}

fn main() {
    let gamma = 0.9;
    for modeled_soft in [true, false] {
        for cf in [2usize, 8, 32] {
            let rows: Vec<(u64, f64, f64, f64, f64)> = (0..10u64)
                .into_par_iter()
                .map(|seed| {
                    let config = WorldConfig {
                        connection_factor: cf,
                        seed: 1000 + seed,
                        ..WorldConfig::default()
                    };
                    let mut system = sample_system(&config).unwrap();
                    let reward = sample_reward(&config).unwrap();
                    let mut worst_soft = f64::INFINITY;
                    let mut worst_hard = f64::INFINITY;
                    let quality_soft = |sys: &TabularSystem| {
                        let (_, p) = soft_value_iteration(sys, &reward, gamma, SOLVER_TOL).unwrap();
                        expected_state_value(sys, &p, &reward, gamma).unwrap()
                    };
                    let quality_hard = |sys: &TabularSystem| {
                        let (_, p) = hard_vi(sys, &reward, gamma);
                        expected_state_value(sys, &p, &reward, gamma).unwrap()
                    };
                    let mut qs = quality_soft(&system);
                    let mut qh = quality_hard(&system);
                    let (q0s, q0h) = (qs, qh);
                    for _ in 0..30 {
                        let modeled = if modeled_soft {
                            soft_value_iteration(&system, &reward, gamma, SOLVER_TOL)
                                .unwrap()
                                .1
                        } else {
                            hard_vi(&system, &reward, gamma).1
                        };
                        let plus = build_mdp_plus(&system, &modeled, &reward, gamma).unwrap();
                        let pi_plus = solve_mdp_plus(&plus, SOLVER_TOL).unwrap();
                        system = extract_transition(&pi_plus, &system).unwrap();
                        let new_qs = quality_soft(&system);
                        let new_qh = quality_hard(&system);
                        worst_soft = worst_soft.min(new_qs - qs);
                        worst_hard = worst_hard.min(new_qh - qh);
                        qs = new_qs;
                        qh = new_qh;
                    }
                    let _ = policy_value; // silence unused import paths
                    (seed, worst_soft, worst_hard, qs / q0s, qh / q0h)
                })
                .collect();
            let min_soft = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            let min_hard = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
            let ratio_s: f64 = rows.iter().map(|r| r.3).sum::<f64>() / rows.len() as f64;
            let ratio_h: f64 = rows.iter().map(|r| r.4).sum::<f64>() / rows.len() as f64;
            println!(
                "modeled={} cf={cf:<3} worst_soft_delta={min_soft:+.3e} worst_hard_delta={min_hard:+.3e} ratio_soft={ratio_s:.3} ratio_hard={ratio_h:.3}",
                if modeled_soft { "soft" } else { "hard" },
            );
        }
    }
}
