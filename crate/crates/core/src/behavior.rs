//! Simulated user-interaction logs.
//!
//! Users roll out a policy in the system; optimality is degraded either by
//! mixing in trajectories from an adversarial policy (MB) or by per-step
//! action noise away from the argmax (NB). Scored logs carry the discounted
//! feature accrual under the true reward.
//!
//! Each trajectory draws from its own (seed, index) RNG stream, so parallel
//! and serial generation produce identical logs.

use ndarray::Array2;
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::mdp::{argmax_slice, argmin_slice, check_policy_for, Policy, RewardModel, TabularSystem, Trajectory};
use crate::oracle::sample_index;
use crate::rng::{stream, stream_rng};

/// Rolls out `count` trajectories: S0 ~ D0, a ~ pi(.|s), s' ~ T(.|s,a),
/// length uniform in `[len_min, len_max]` pairs.
pub fn sample_trajectories(
    system: &TabularSystem,
    policy: &Policy,
    count: usize,
    len_min: usize,
    len_max: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    check_len_range(len_min, len_max)?;
    check_policy_for(system, policy)?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| rollout(system, policy, len_min, len_max, seed, i as u64))
        .collect())
}

fn rollout(
    system: &TabularSystem,
    policy: &Policy,
    len_min: usize,
    len_max: usize,
    seed: u64,
    index: u64,
) -> Trajectory {
    let mut rng = stream_rng(seed, stream::TRAJECTORY_BASE + index);
    let len = rng.random_range(len_min..=len_max);
    let mut steps = Vec::with_capacity(len);
    let mut state = sample_index(system.initial_dist().as_slice().unwrap(), &mut rng);
    for t in 0..len {
        let action = sample_index(policy.probs().row(state).as_slice().unwrap(), &mut rng);
        steps.push((state, action));
        if t + 1 < len {
            state = sample_index(
                system
                    .transition()
                    .index_axis(ndarray::Axis(0), state)
                    .index_axis(ndarray::Axis(0), action)
                    .as_slice()
                    .unwrap(),
                &mut rng,
            );
        }
    }
    Trajectory::new(steps)
}

fn check_len_range(len_min: usize, len_max: usize) -> Result<()> {
    if len_min == 0 || len_min > len_max {
        return Err(CoreError::InvalidConfig(format!(
            "bad trajectory length range [{len_min}, {len_max}]"
        )));
    }
    Ok(())
}

/// Deterministic policy picking the least likely action of `policy` in every
/// state; ties broken by the lowest action index.
pub fn adversarial_policy(policy: &Policy) -> Policy {
    let mut probs = Array2::zeros((policy.n_states(), policy.n_actions()));
    for (s, row) in policy.probs().outer_iter().enumerate() {
        probs[[s, argmin_slice(row.as_slice().unwrap())]] = 1.0;
    }
    Policy::new(probs).expect("one-hot rows are stochastic")
}

/// Mix-of-behaviors log: `ceil(nf * count)` trajectories from the adversarial
/// policy, the rest from `optimal`, shuffled so downstream batching sees a
/// mixture. At nf = 0 the output is (as a multiset) exactly
/// `sample_trajectories` with the optimal policy and the same seed.
pub fn mix_behaviors(
    system: &TabularSystem,
    optimal: &Policy,
    noise_factor: f64,
    count: usize,
    len_min: usize,
    len_max: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    check_noise_factor(noise_factor)?;
    check_len_range(len_min, len_max)?;
    check_policy_for(system, optimal)?;
    let n_adversarial = ((noise_factor * count as f64).ceil() as usize).min(count);
    let adversarial = adversarial_policy(optimal);
    let mut trajectories: Vec<Trajectory> = (0..count)
        .into_par_iter()
        .map(|i| {
            let policy = if i < n_adversarial { &adversarial } else { optimal };
            rollout(system, policy, len_min, len_max, seed, i as u64)
        })
        .collect();
    shuffle(&mut trajectories, seed);
    Ok(trajectories)
}

fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = stream_rng(seed, stream::SHUFFLE);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn check_noise_factor(noise_factor: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&noise_factor) {
        return Err(CoreError::InvalidConfig(format!(
            "noise factor {noise_factor} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Result of [`noisy_policy`]; `degenerate` flags the single-action case
/// where no noise can be injected and the policy is returned unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyPolicy {
    pub policy: Policy,
    pub degenerate: bool,
}

/// Noise-in-behavior policy: per state, probability `1 - nf` on the argmax
/// action and `nf` spread uniformly over the remaining actions.
pub fn noisy_policy(policy: &Policy, noise_factor: f64) -> Result<NoisyPolicy> {
    check_noise_factor(noise_factor)?;
    let n_actions = policy.n_actions();
    if n_actions == 1 && noise_factor > 0.0 {
        return Ok(NoisyPolicy {
            policy: policy.clone(),
            degenerate: true,
        });
    }
    let mut probs = Array2::zeros((policy.n_states(), n_actions));
    let off = noise_factor / (n_actions - 1).max(1) as f64;
    for (s, row) in policy.probs().outer_iter().enumerate() {
        let best = argmax_slice(row.as_slice().unwrap());
        for a in 0..n_actions {
            probs[[s, a]] = if a == best { 1.0 - noise_factor } else { off };
        }
    }
    Ok(NoisyPolicy {
        policy: Policy::new(probs)?,
        degenerate: false,
    })
}

/// Attaches scores: score(traj) = sum_t gamma^t theta[S_t], the discounted
/// feature accrual under `reward`. The score is linear in the weights.
pub fn score_trajectories(
    trajectories: &[Trajectory],
    reward: &RewardModel,
    gamma: f64,
) -> Vec<Trajectory> {
    trajectories
        .iter()
        .map(|traj| Trajectory {
            steps: traj.steps.clone(),
            score: Some(traj.discounted_return(reward, gamma)),
        })
        .collect()
}

/// Writes a log as line-delimited records: `traj_id,[s0,a0,s1,a1,...],score?`.
pub fn write_log(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, traj) in trajectories.iter().enumerate() {
        write_log_line(&mut file, id, traj)?;
    }
    Ok(())
}

fn write_log_line<W: Write>(out: &mut W, id: usize, traj: &Trajectory) -> Result<()> {
    let flat: Vec<String> = traj
        .steps
        .iter()
        .flat_map(|&(s, a)| [s.to_string(), a.to_string()])
        .collect();
    match traj.score {
        Some(score) => writeln!(out, "{id},[{}],{}", flat.join(","), score)?,
        None => writeln!(out, "{id},[{}]", flat.join(","))?,
    }
    Ok(())
}

/// In-memory rendering of the log format; also used for log fingerprints.
pub fn log_to_string(trajectories: &[Trajectory]) -> String {
    let mut buf = Vec::new();
    for (id, traj) in trajectories.iter().enumerate() {
        write_log_line(&mut buf, id, traj).expect("writing to memory cannot fail");
    }
    String::from_utf8(buf).expect("log lines are ASCII")
}

pub fn read_log(path: &Path) -> Result<Vec<Trajectory>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_log_line(&line).map_err(|msg| {
            CoreError::Format(format!("log line {}: {msg}", lineno + 1))
        })?);
    }
    Ok(out)
}

fn parse_log_line(line: &str) -> std::result::Result<Trajectory, String> {
    let open = line.find('[').ok_or("missing '['")?;
    let close = line.rfind(']').ok_or("missing ']'")?;
    if close < open {
        return Err("']' before '['".into());
    }
    let body = &line[open + 1..close];
    let mut flat = Vec::new();
    for piece in body.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        flat.push(piece.parse::<usize>().map_err(|e| e.to_string())?);
    }
    if flat.len() % 2 != 0 {
        return Err("odd number of state/action entries".into());
    }
    let steps = flat.chunks(2).map(|c| (c[0], c[1])).collect();
    let rest = line[close + 1..].trim_start_matches(',').trim();
    let score = if rest.is_empty() {
        None
    } else {
        Some(rest.parse::<f64>().map_err(|e| e.to_string())?)
    };
    Ok(Trajectory { steps, score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::soft_value_iteration;
    use crate::world::{sample_reward, sample_system, WorldConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_world(seed: u64) -> (TabularSystem, RewardModel) {
        let config = WorldConfig {
            n_states: 8,
            n_actions: 3,
            connection_factor: 3,
            reward_fraction: 0.25,
            seed,
        };
        (sample_system(&config).unwrap(), sample_reward(&config).unwrap())
    }

    #[test]
    fn lengths_and_connectivity_hold() {
        let (system, _) = small_world(2);
        let policy = Policy::uniform(8, 3);
        let trajs = sample_trajectories(&system, &policy, 500, 5, 9, 42).unwrap();
        assert_eq!(trajs.len(), 500);
        for traj in &trajs {
            traj.validate(&system, 5, 9).unwrap();
        }
    }

    #[test]
    fn deterministic_single_action_chain_repeats() {
        // One action, deterministic rows, deterministic start: all
        // trajectories of one length are identical.
        let connectivity = vec![vec![vec![1]], vec![vec![0]]];
        let mut t = ndarray::Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 0]] = 1.0;
        let system = TabularSystem::new(2, 1, connectivity, t, array![1.0, 0.0]).unwrap();
        let policy = Policy::uniform(2, 1);
        let trajs = sample_trajectories(&system, &policy, 50, 4, 4, 0).unwrap();
        for traj in &trajs {
            assert_eq!(traj.steps, vec![(0, 0), (1, 0), (0, 0), (1, 0)]);
        }
    }

    #[test]
    fn length_distribution_is_uniform() {
        let (system, _) = small_world(3);
        let policy = Policy::uniform(8, 3);
        let (lo, hi) = (30, 40);
        let n = 15_000;
        let trajs = sample_trajectories(&system, &policy, n, lo, hi, 7).unwrap();
        let mut counts = vec![0usize; hi - lo + 1];
        for traj in &trajs {
            assert!(traj.len() >= lo && traj.len() <= hi);
            counts[traj.len() - lo] += 1;
        }
        // Chi-squared against uniform over 11 bins; df = 10, p = 0.01
        // critical value 23.21.
        let expected = n as f64 / counts.len() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 23.21, "chi2 = {chi2}");
    }

    #[test]
    fn first_states_match_initial_distribution() {
        let (system, _) = small_world(4);
        let policy = Policy::uniform(8, 3);
        let n = 15_000;
        let trajs = sample_trajectories(&system, &policy, n, 3, 5, 11).unwrap();
        let mut counts = vec![0usize; 8];
        for traj in &trajs {
            counts[traj.steps[0].0] += 1;
        }
        for s in 0..8 {
            let p = system.initial_dist()[s];
            let sem = (p * (1.0 - p) / n as f64).sqrt();
            let freq = counts[s] as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sem.max(1e-4),
                "state {s}: freq {freq} vs D0 {p}"
            );
        }
    }

    #[test]
    fn adversarial_picks_argmin_with_ties_to_lowest_index() {
        let policy = Policy::new(array![
            [0.25, 0.25, 0.25, 0.25],
            [0.7, 0.1, 0.2, 0.0],
        ])
        .unwrap();
        // Row 1 has a strict argmin at index 3; the uniform row ties at 0.
        let adv = adversarial_policy(&policy);
        assert_eq!(adv.argmax(0), 0);
        assert_eq!(adv.argmax(1), 3);

        let three = Policy::new(array![[0.7, 0.1, 0.2]]).unwrap();
        assert_eq!(adversarial_policy(&three).argmax(0), 1);
    }

    #[test]
    fn adversarial_twice_selects_original_argmax() {
        // For 2-action policies the argmin of a one-hot row is the other
        // action, so applying the construction twice lands on the argmax.
        let policy = Policy::new(array![[0.8, 0.2], [0.3, 0.7]]).unwrap();
        let twice = adversarial_policy(&adversarial_policy(&policy));
        assert_eq!(twice.argmax(0), 0);
        assert_eq!(twice.argmax(1), 1);
    }

    #[test]
    fn mix_behavior_counts() {
        let (system, reward) = small_world(5);
        let (_, optimal) = soft_value_iteration(&system, &reward, 0.9, 1e-8).unwrap();
        let adv = adversarial_policy(&optimal);

        let count = 1000;
        let nf = 0.2;
        let mixed = mix_behaviors(&system, &optimal, nf, count, 4, 6, 13).unwrap();
        assert_eq!(mixed.len(), count);

        // Count trajectories by regenerating both pure logs and matching.
        let pure: std::collections::HashSet<Vec<(usize, usize)>> =
            sample_trajectories(&system, &adv, 200, 4, 6, 13)
                .unwrap()
                .into_iter()
                .map(|t| t.steps)
                .collect();
        let adversarial_share = mixed.iter().filter(|t| pure.contains(&t.steps)).count();
        assert_eq!(adversarial_share, 200);
    }

    #[test]
    fn mix_behavior_nf_zero_equals_optimal_sampling() {
        let (system, reward) = small_world(6);
        let (_, optimal) = soft_value_iteration(&system, &reward, 0.9, 1e-8).unwrap();
        let mixed = mix_behaviors(&system, &optimal, 0.0, 300, 4, 6, 17).unwrap();
        let plain = sample_trajectories(&system, &optimal, 300, 4, 6, 17).unwrap();
        let mut a: Vec<_> = mixed.into_iter().map(|t| t.steps).collect();
        let mut b: Vec<_> = plain.into_iter().map(|t| t.steps).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn mix_behavior_nf_one_is_fully_adversarial() {
        let (system, reward) = small_world(8);
        let (_, optimal) = soft_value_iteration(&system, &reward, 0.9, 1e-8).unwrap();
        let adv = adversarial_policy(&optimal);
        let mixed = mix_behaviors(&system, &optimal, 1.0, 100, 4, 6, 19).unwrap();
        let pure: Vec<_> = sample_trajectories(&system, &adv, 100, 4, 6, 19)
            .unwrap()
            .into_iter()
            .map(|t| t.steps)
            .collect();
        let mut a: Vec<_> = mixed.into_iter().map(|t| t.steps).collect();
        let mut b = pure;
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_policy_rows() {
        let policy = Policy::new(array![[0.1, 0.6, 0.2, 0.1]]).unwrap();
        let nb = noisy_policy(&policy, 0.2).unwrap();
        assert!(!nb.degenerate);
        assert_abs_diff_eq!(nb.policy.prob(0, 1), 0.8, epsilon = 1e-12);
        for a in [0usize, 2, 3] {
            assert_abs_diff_eq!(nb.policy.prob(0, a), 0.2 / 3.0, epsilon = 1e-12);
        }

        let nf0 = noisy_policy(&policy, 0.0).unwrap();
        assert_eq!(nf0.policy.prob(0, 1), 1.0);

        let nf1 = noisy_policy(&policy, 1.0).unwrap();
        assert_eq!(nf1.policy.prob(0, 1), 0.0);
        assert_abs_diff_eq!(nf1.policy.prob(0, 0), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn noisy_policy_single_action_degenerates() {
        let policy = Policy::uniform(3, 1);
        let nb = noisy_policy(&policy, 0.5).unwrap();
        assert!(nb.degenerate);
        assert_eq!(nb.policy, policy);
    }

    #[test]
    fn scores_accrue_discounted_rewards() {
        let reward = RewardModel::new(array![1.0, 0.0, 1.0]).unwrap();
        // Reward-1 states visited at t = 0 and t = 2 only, gamma = 0.9.
        let traj = Trajectory::new(vec![(0, 0), (1, 0), (2, 0)]);
        let scored = score_trajectories(&[traj], &reward, 0.9);
        assert_abs_diff_eq!(scored[0].score.unwrap(), 1.81, epsilon = 1e-12);
    }

    #[test]
    fn score_is_linear_in_weights() {
        let (system, _) = small_world(9);
        let policy = Policy::uniform(8, 3);
        let trajs = sample_trajectories(&system, &policy, 20, 4, 6, 3).unwrap();
        let r1 = RewardModel::new(Array1::from_iter((0..8).map(|s| s as f64 * 0.3))).unwrap();
        let r2 = RewardModel::new(Array1::from_iter((0..8).map(|s| 1.0 - s as f64))).unwrap();
        let sum = RewardModel::new(r1.weights() + r2.weights()).unwrap();
        let s1 = score_trajectories(&trajs, &r1, 0.9);
        let s2 = score_trajectories(&trajs, &r2, 0.9);
        let s12 = score_trajectories(&trajs, &sum, 0.9);
        for i in 0..trajs.len() {
            assert_abs_diff_eq!(
                s12[i].score.unwrap(),
                s1[i].score.unwrap() + s2[i].score.unwrap(),
                epsilon = 1e-12
            );
        }
    }

    use ndarray::Array1;

    #[test]
    fn score_matches_core_return_convention() {
        let (system, reward) = small_world(10);
        let policy = Policy::uniform(8, 3);
        let trajs = sample_trajectories(&system, &policy, 10, 4, 6, 5).unwrap();
        let scored = score_trajectories(&trajs, &reward, 0.9);
        for (orig, with_score) in trajs.iter().zip(scored.iter()) {
            assert_abs_diff_eq!(
                with_score.score.unwrap(),
                orig.discounted_return(&reward, 0.9),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn log_round_trip() {
        let dir = std::env::temp_dir().join(format!("log_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.txt");
        let mut trajs = vec![
            Trajectory::new(vec![(0, 1), (3, 2), (5, 0)]),
            Trajectory::new(vec![(2, 0), (2, 1)]),
        ];
        trajs[1].score = Some(1.8125);
        write_log(&path, &trajs).unwrap();
        let loaded = read_log(&path).unwrap();
        assert_eq!(trajs, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }
}
