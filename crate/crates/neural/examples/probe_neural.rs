//! Scratch probe for network-based trends; not part of the deliverable.

use iso_neural::sandbox::{run_iso_neural, NeuralConfig, Setup};
use iso_neural::system::RewardKind;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    for setup in [Setup::OracleOracle, Setup::AirlOracle, Setup::AirlAirl] {
        for seed in 0..seeds {
            let started = std::time::Instant::now();
            let config = NeuralConfig::desk_scale(seed, setup, 0.001, RewardKind::Handcrafted);
            let records = run_iso_neural(&config).unwrap();
            let returns: Vec<String> = records
                .iter()
                .map(|r| format!("{:.2}±{:.2}", r.average_return, r.sem))
                .collect();
            println!(
                "{:<14} seed={seed} returns=[{}] ({:.0}s)",
                setup.label(),
                returns.join(", "),
                started.elapsed().as_secs_f64()
            );
        }
    }
    // Lambda ordering probe: oracle/oracle at 0.1 for comparison.
    for seed in 0..seeds {
        let started = std::time::Instant::now();
        let config = NeuralConfig::desk_scale(seed, Setup::OracleOracle, 0.1, RewardKind::Handcrafted);
        let records = run_iso_neural(&config).unwrap();
        let returns: Vec<String> = records
            .iter()
            .map(|r| format!("{:.2}", r.average_return))
            .collect();
        println!(
            "oracle lambda=0.1 seed={seed} returns=[{}] ({:.0}s)",
            returns.join(", "),
            started.elapsed().as_secs_f64()
        );
    }
}
