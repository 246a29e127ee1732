//! Scratch probe for adversarial-recovery diagnostics; not a deliverable.

use iso_neural::airl::{airl_train, AirlConfig};
use iso_neural::env::{rollout_user_episodes, RewardFn, EPISODE_HORIZON};
use iso_neural::mlp::{Activation, Init, Mlp};
use iso_neural::policy::CategoricalPolicy;
use iso_neural::ppo::PpoConfig;
use iso_neural::sandbox::train_user_policy;
use iso_neural::system::{NeuralSystem, RewardKind};
use ndarray::Array1;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag.into());
    rng
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
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        cov += (ra[i] - mean) * (rb[i] - mean);
        va += (ra[i] - mean) * (ra[i] - mean);
        vb += (rb[i] - mean) * (rb[i] - mean);
    }
    cov / (va.sqrt() * vb.sqrt())
}


/// A system whose response depends strongly on the user action: the mean of
/// the next state is a contraction of the current state plus a per-action
/// anchor of growing norm, with tight output noise.
fn steerable_system(dim: usize, n_actions: usize, seed: u64) -> NeuralSystem {
    use iso_neural::mlp::Layer;
    let mut system = NeuralSystem::new(dim, n_actions, RewardKind::Handcrafted, seed);
    let mut weights = ndarray::Array2::zeros((2 * dim, dim + n_actions));
    for i in 0..dim {
        weights[[i, i]] = 0.5;
    }
    for a in 0..n_actions {
        let direction = a % dim;
        weights[[direction, dim + a]] = 2.0 * a as f64 / (n_actions - 1) as f64;
    }
    let mut biases = ndarray::Array1::zeros(2 * dim);
    for j in dim..2 * dim {
        biases[j] = -4.0; // squashes the log-variance near its floor
    }
    system.system_policy.net = iso_neural::mlp::Mlp {
        layers: vec![Layer {
            weights,
            biases,
            activation: Activation::Linear,
        }],
    };
    system
}

fn main() {

    // Arm 1: random expert.
    let system = NeuralSystem::new(4, 3, RewardKind::Handcrafted, 51);
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
        EPISODE_HORIZON,
        &mut stream(2, 0),
    );
    let cfg = AirlConfig {
        rounds: 8,
        disc_batches: 4,
        ppo: PpoConfig {
            batch_steps: 512,
            updates: 1,
            ..PpoConfig::default()
        },
        ..AirlConfig::default()
    };
    let state = airl_train(&expert, &system.system_policy, 4, 3, &cfg, &mut stream(3, 0)).unwrap();
    let visited: Vec<Array1<f64>> = expert
        .iter()
        .flat_map(|ep| ep.states.iter().cloned())
        .take(2_000)
        .collect();
    let recovered: Vec<f64> = visited.iter().map(|s| state.recovered_reward(s)).collect();
    let real: Vec<f64> = visited.iter().map(|s| system.true_reward.eval(s)).collect();
    let iqr = |values: &[f64]| {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[values.len() * 3 / 4] - sorted[values.len() / 4]
    };
    println!(
        "random expert: acc tail {:?}, rho {:.3}, iqr(recovered) {:.3}, iqr(real) {:.3}, max(real) {:.3}",
        &state.diagnostics.disc_accuracy[state.diagnostics.disc_accuracy.len() - 4..],
        spearman(&recovered, &real),
        iqr(&recovered),
        iqr(&real),
        real.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    // Arm 2: trained expert, mixed evaluation states, several budgets.
    for (dim, user_updates, rounds, gen_batch) in [(6usize, 15usize, 15usize, 1024usize), (6, 20, 20, 2048), (6, 15, 12, 1024)] {
        let system = steerable_system(dim, 4, 53);
        let (expert_policy, report) = train_user_policy(
            &system,
            RewardFn::True(&system.true_reward),
            &PpoConfig {
                batch_steps: 1024,
                updates: user_updates,
                ..PpoConfig::default()
            },
            &mut stream(4, 0),
        )
        .unwrap();
        let expert = rollout_user_episodes(
            &system.system_policy,
            &expert_policy,
            dim,
            4,
            250,
            EPISODE_HORIZON,
            &mut stream(5, 0),
        );
        let cfg = AirlConfig {
            rounds,
            ppo: PpoConfig {
                batch_steps: gen_batch,
                updates: 1,
                ..PpoConfig::default()
            },
            ..AirlConfig::default()
        };
        let state =
            airl_train(&expert, &system.system_policy, dim, 4, &cfg, &mut stream(6, 0)).unwrap();
        let random_user = CategoricalPolicy::new(Mlp::new(
            &[dim, 64, 64, 4],
            Activation::Tanh,
            Init::Xavier,
            &mut stream(7, 0),
        ));
        let background = rollout_user_episodes(
            &system.system_policy,
            &random_user,
            dim,
            4,
            125,
            EPISODE_HORIZON,
            &mut stream(8, 0),
        );
        let mut visited: Vec<Array1<f64>> = expert
            .iter()
            .flat_map(|ep| ep.states.iter().cloned())
            .take(5_000)
            .collect();
        visited.extend(
            background
                .iter()
                .flat_map(|ep| ep.states.iter().cloned())
                .take(5_000),
        );
        let recovered: Vec<f64> = visited.iter().map(|s| state.recovered_reward(s)).collect();
        let real: Vec<f64> = visited.iter().map(|s| system.true_reward.eval(s)).collect();
        println!(
            "trained expert (d{dim} u{user_updates} r{rounds} b{gen_batch}): expert return {:.1}, rho mixed {:.3}, rho expert-only {:.3}",
            report.final_mean_return,
            spearman(&recovered, &real),
            spearman(&recovered[..5_000], &real[..5_000]),
        );
    }
}
