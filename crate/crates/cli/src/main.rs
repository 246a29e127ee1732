//! Command-line entry point for the interactive-system optimizer harness.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use iso_cli::config::{ExperimentConfig, Mode};
use iso_cli::experiment::{read_results, run_experiment};
use iso_cli::plots::emit_plot_data;
use iso_cli::stats::SummaryStats;
use iso_core::world::{sample_reward, sample_system, WorldConfig, WorldFile};

#[derive(Parser)]
#[command(name = "iso", about = "Optimize simulated interactive systems from logged user behavior", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a tabular world (system + true reward) and write it to disk.
    GenWorld(GenWorldArgs),
    /// Run a tabular experiment from a config file.
    RunTabular(RunArgs),
    /// Run a network-based experiment from a config file.
    RunNeural(RunArgs),
    /// Print aggregate statistics of a results file.
    Summarize(SummarizeArgs),
    /// Write per-curve plot CSVs from a results file.
    EmitPlots(EmitPlotsArgs),
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long, default_value_t = 64)]
    n_states: usize,
    #[arg(long, default_value_t = 4)]
    n_actions: usize,
    #[arg(long, default_value_t = 8)]
    connection_factor: usize,
    #[arg(long, default_value_t = 0.25)]
    reward_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the world file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Re-run even if a finished summary for the same config exists.
    #[arg(long)]
    force: bool,
    /// Override: number of replicas.
    #[arg(long)]
    replicas: Option<usize>,
    /// Override: optimizer iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Override: base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override: output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override: worker-pool size (falls back to ISO_WORKERS, then all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Override: tabular connection factor.
    #[arg(long)]
    connection_factor: Option<usize>,
    /// Override: behavior type (irl-labelled | optimal | suboptimal).
    #[arg(long)]
    behavior: Option<String>,
    /// Override: noise factor for suboptimal behavior.
    #[arg(long)]
    noise_factor: Option<f64>,
    /// Override: IRL method (maxent | dm-irl).
    #[arg(long)]
    irl_method: Option<String>,
    /// Override: KL penalty weight (neural).
    #[arg(long)]
    lambda: Option<f64>,
    /// Override: setup (oracle-oracle | airl-oracle | airl-airl).
    #[arg(long)]
    setup: Option<String>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Results CSV produced by a run.
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args)]
struct EmitPlotsArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenWorld(args) => gen_world(args),
        Command::RunTabular(args) => run(args, Mode::Tabular),
        Command::RunNeural(args) => run(args, Mode::Neural),
        Command::Summarize(args) => summarize(args),
        Command::EmitPlots(args) => emit_plots(args),
    }
}

fn gen_world(args: GenWorldArgs) -> anyhow::Result<()> {
    let config = WorldConfig {
        n_states: args.n_states,
        n_actions: args.n_actions,
        connection_factor: args.connection_factor,
        reward_fraction: args.reward_fraction,
        seed: args.seed,
    };
    let system = sample_system(&config).context("sampling system")?;
    let reward = sample_reward(&config).context("sampling reward")?;
    WorldFile::new(config, system, &reward)
        .save(&args.output)
        .context("writing world file")?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn run(args: RunArgs, expected_mode: Mode) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if config.mode != expected_mode {
        bail!(
            "config mode does not match the subcommand (expected {:?})",
            expected_mode
        );
    }
    apply_overrides(&mut config, &args)?;
    config.validate()?;

    let summary = run_experiment(&config, args.force)?;
    print_summary(&config.name, &summary.stats);
    if !summary.failed_replicas.is_empty() {
        bail!(
            "{} replica(s) failed; see warnings above",
            summary.failed_replicas.len()
        );
    }
    Ok(())
}

fn apply_overrides(config: &mut ExperimentConfig, args: &RunArgs) -> anyhow::Result<()> {
    if let Some(replicas) = args.replicas {
        config.replicas = replicas;
    }
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(output) = &args.output {
        config.output = output.clone();
    }
    if let Some(workers) = args.workers {
        config.workers = Some(workers);
    }
    if let Some(section) = config.tabular.as_mut() {
        if let Some(cf) = args.connection_factor {
            section.connection_factor = cf;
        }
        if let Some(behavior) = &args.behavior {
            section.behavior = behavior.clone();
        }
        if let Some(nf) = args.noise_factor {
            section.noise_factor = nf;
        }
        if let Some(method) = &args.irl_method {
            section.irl_method = method.clone();
        }
    }
    if let Some(section) = config.neural.as_mut() {
        if let Some(lambda) = args.lambda {
            section.lambda = lambda;
        }
        if let Some(setup) = &args.setup {
            section.setup = setup.clone();
        }
    }
    Ok(())
}

fn summarize(args: SummarizeArgs) -> anyhow::Result<()> {
    let rows = read_results(&args.results)?;
    if rows.is_empty() {
        println!("no rows in {}", args.results.display());
        return Ok(());
    }
    // Group traces by run_id within each curve.
    use std::collections::BTreeMap;
    let mut curves: BTreeMap<String, BTreeMap<String, Vec<(usize, f64)>>> = BTreeMap::new();
    for row in &rows {
        let curve = if row.setup.is_empty() {
            format!(
                "cf={} behavior={} method={}",
                row.cf.map(|c| c.to_string()).unwrap_or_default(),
                row.behavior,
                row.irl_method
            )
        } else {
            format!("lambda={} setup={}", row.lambda.unwrap_or(0.0), row.setup)
        };
        curves
            .entry(curve)
            .or_default()
            .entry(row.run_id.clone())
            .or_default()
            .push((row.iteration, row.quality));
    }
    for (curve, runs) in curves {
        let mut traces: Vec<Vec<f64>> = Vec::new();
        for (_, mut points) in runs {
            points.sort_by_key(|(iteration, _)| *iteration);
            traces.push(points.into_iter().map(|(_, q)| q).collect());
        }
        let len = traces.iter().map(Vec::len).min().unwrap_or(0);
        if len == 0 {
            continue;
        }
        for trace in &mut traces {
            trace.truncate(len);
        }
        let stats = SummaryStats::from_traces(&traces);
        print_summary(&curve, &stats);
    }
    Ok(())
}

fn print_summary(label: &str, stats: &SummaryStats) {
    let initial = stats.per_iteration.first().map(|s| s.mean).unwrap_or(f64::NAN);
    let last = stats.per_iteration.last().map(|s| s.mean).unwrap_or(f64::NAN);
    let p = match (stats.t_test.p_value, stats.t_test.degenerate) {
        (Some(p), false) => format!("{p:.3e}"),
        (Some(_), true) => "<eps (degenerate)".into(),
        (None, _) => "undefined".into(),
    };
    println!(
        "{label}: replicas={} initial={initial:.4} final={last:.4} ratio={:.4} p={p}",
        stats.replicas, stats.improvement_ratio
    );
}

fn emit_plots(args: EmitPlotsArgs) -> anyhow::Result<()> {
    let rows = read_results(&args.results)?;
    let written = emit_plot_data(&rows, &args.out_dir)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
