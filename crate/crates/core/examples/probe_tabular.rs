//! Scratch probe for tabular trends; not part of the deliverable surface.

use iso_core::iso::{run_iso, BehaviorType, IrlMethod, NoiseKind, RunParams};
use iso_core::world::WorldConfig;
use rayon::prelude::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("mono");
    match mode {
        "mono" => monotonicity(),
        "table" => table_trends(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn monotonicity() {
    for cf in [2usize, 8, 32] {
        let results: Vec<(u64, f64, usize)> = (0..10u64)
            .into_par_iter()
            .map(|seed| {
                let config = WorldConfig {
                    connection_factor: cf,
                    seed: 1000 + seed,
                    ..WorldConfig::default()
                };
                let run = run_iso(
                    &config,
                    BehaviorType::IrlLabelled,
                    IrlMethod::DmIrl,
                    30,
                    seed,
                    &RunParams::default(),
                )
                .unwrap();
                let mut worst = f64::INFINITY;
                let mut dips = 0;
                for pair in run.records.windows(2) {
                    let delta = pair[1].quality - pair[0].quality;
                    worst = worst.min(delta);
                    if delta < -1e-6 {
                        dips += 1;
                    }
                }
                (seed, worst, dips)
            })
            .collect();
        for (seed, worst, dips) in results {
            println!("cf={cf} seed={seed} worst_delta={worst:+.3e} dips={dips}");
        }
    }
}

fn table_trends() {
    let cells: Vec<(&str, usize, BehaviorType, IrlMethod)> = vec![
        ("IRL-labelled", 32, BehaviorType::IrlLabelled, IrlMethod::DmIrl),
        ("IRL-labelled", 8, BehaviorType::IrlLabelled, IrlMethod::DmIrl),
        ("IRL-labelled", 2, BehaviorType::IrlLabelled, IrlMethod::DmIrl),
        ("Optimal", 32, BehaviorType::Optimal, IrlMethod::MaxEnt),
        ("Optimal", 8, BehaviorType::Optimal, IrlMethod::MaxEnt),
        ("Optimal", 2, BehaviorType::Optimal, IrlMethod::MaxEnt),
        (
            "Sub-0.2-MB",
            32,
            BehaviorType::SubOptimal {
                noise_factor: 0.2,
                kind: NoiseKind::MixedBehaviors,
            },
            IrlMethod::MaxEnt,
        ),
        (
            "Sub-0.6-MB",
            32,
            BehaviorType::SubOptimal {
                noise_factor: 0.6,
                kind: NoiseKind::MixedBehaviors,
            },
            IrlMethod::MaxEnt,
        ),
    ];
    for (label, cf, behavior, method) in cells {
        let started = std::time::Instant::now();
        let outcomes: Vec<(f64, f64)> = (0..10u64)
            .into_par_iter()
            .map(|replica| {
                let config = WorldConfig {
                    connection_factor: cf,
                    seed: 5000 + replica,
                    ..WorldConfig::default()
                };
                let run = run_iso(&config, behavior, method, 30, replica, &RunParams::default())
                    .unwrap();
                (
                    run.records[0].quality,
                    run.records.last().unwrap().quality,
                )
            })
            .collect();
        let initial: f64 = outcomes.iter().map(|(i, _)| i).sum::<f64>() / outcomes.len() as f64;
        let fin: f64 = outcomes.iter().map(|(_, f)| f).sum::<f64>() / outcomes.len() as f64;
        println!(
            "{label:<14} cf={cf:<3} initial={initial:.3} final={fin:.3} ratio={:.3} ({:.1}s)",
            fin / initial,
            started.elapsed().as_secs_f64()
        );
    }
}
