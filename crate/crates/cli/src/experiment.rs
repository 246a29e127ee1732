//! Replica execution and result emission.
//!
//! Replicas run in a worker pool and are merged by replica index, so the
//! aggregate is independent of scheduling. Replica seeds derive from the
//! base seed and the replica index alone; adding replicas never perturbs
//! existing ones. A finished run is detected through its summary sidecar and
//! skipped unless forced.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use iso_core::iso::{run_iso, IsoRun};
use iso_core::rng::derive_seed;
use iso_core::world::RecoveredRewardRecord;
use iso_neural::sandbox::{run_iso_neural, NeuralIterationRecord};

use crate::config::{ExperimentConfig, Mode};
use crate::stats::SummaryStats;
use crate::{HarnessError, Result};

/// One line of the results file. Tabular rows leave `setup`/`lambda` empty;
/// network-based rows leave `behavior`/`irl_method`/`cf`/`nf` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub iteration: usize,
    pub behavior: String,
    pub irl_method: String,
    pub cf: Option<usize>,
    pub nf: Option<f64>,
    pub quality: f64,
    pub wall_ms: u64,
    pub setup: String,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub config_fingerprint: u64,
    pub mode: Mode,
    pub stats: SummaryStats,
    pub failed_replicas: Vec<FailedReplica>,
    pub results_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedReplica {
    pub replica: usize,
    pub error: String,
}

struct ReplicaOutput {
    replica: usize,
    qualities: Vec<f64>,
    rows: Vec<ResultRow>,
    reward_records: Vec<RecoveredRewardRecord>,
}

pub fn results_path(config: &ExperimentConfig) -> PathBuf {
    config.output.join(format!("{}.results.csv", config.name))
}

pub fn summary_path(config: &ExperimentConfig) -> PathBuf {
    config.output.join(format!("{}.summary.json", config.name))
}

/// Runs all replicas of a configured experiment, writes the results file and
/// summary sidecar, and returns the summary. Re-running a finished config is
/// a no-op unless `force` is set.
pub fn run_experiment(config: &ExperimentConfig, force: bool) -> Result<ExperimentSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.output)?;
    let fingerprint = config.fingerprint();

    let sidecar = summary_path(config);
    if !force && sidecar.exists() {
        if let Ok(existing) = load_summary(&sidecar) {
            if existing.config_fingerprint == fingerprint {
                return Ok(existing);
            }
        }
    }

    let workers = config
        .workers
        .or_else(|| {
            std::env::var("ISO_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("worker pool: {e}")))?;

    let outcomes: Vec<std::result::Result<ReplicaOutput, String>> = pool.install(|| {
        (0..config.replicas)
            .into_par_iter()
            .map(|replica| run_replica(config, fingerprint, replica).map_err(|e| e.to_string()))
            .collect()
    });

    let mut outputs = Vec::with_capacity(config.replicas);
    let mut failed = Vec::new();
    for (replica, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(output) => outputs.push(output),
            Err(error) => {
                eprintln!("warning: replica {replica} failed: {error}");
                failed.push(FailedReplica { replica, error });
            }
        }
    }
    if failed.len() * 5 > config.replicas {
        return Err(HarnessError::TooManyFailures {
            failed: failed.len(),
            total: config.replicas,
            first: failed[0].error.clone(),
        });
    }
    if outputs.is_empty() {
        return Err(HarnessError::TooManyFailures {
            failed: failed.len(),
            total: config.replicas,
            first: "all replicas failed".into(),
        });
    }

    // Merge deterministically by replica index.
    outputs.sort_by_key(|o| o.replica);
    let results = results_path(config);
    write_results(&results, outputs.iter().flat_map(|o| o.rows.iter()))?;

    // Recovered-weight provenance, one JSON line per (replica, iteration).
    let reward_log = config.output.join(format!("{}.rewards.jsonl", config.name));
    if reward_log.exists() {
        std::fs::remove_file(&reward_log)?;
    }
    for output in &outputs {
        iso_core::world::append_reward_records(&reward_log, &output.reward_records)?;
    }

    let traces: Vec<Vec<f64>> = outputs.iter().map(|o| o.qualities.clone()).collect();
    let summary = ExperimentSummary {
        name: config.name.clone(),
        config_fingerprint: fingerprint,
        mode: config.mode,
        stats: SummaryStats::from_traces(&traces),
        failed_replicas: failed,
        results_path: results,
    };
    save_summary(&sidecar, &summary)?;
    Ok(summary)
}

fn run_replica(
    config: &ExperimentConfig,
    fingerprint: u64,
    replica: usize,
) -> Result<ReplicaOutput> {
    let run_id = format!("{fingerprint:016x}-{replica:03}");
    let replica_seed = derive_seed(config.seed, replica as u64);
    match config.mode {
        Mode::Tabular => {
            let section = config.tabular.as_ref().expect("validated");
            let behavior = section.behavior_type()?;
            let method = section.irl()?;
            let world = config.world_config(replica_seed)?;
            let params = config.run_params()?;
            let run: IsoRun = run_iso(
                &world,
                behavior,
                method,
                config.iterations,
                derive_seed(replica_seed, 1),
                &params,
            )?;
            let (behavior_label, method_label) = (behavior.label(), method.label());
            let hyperparams = match method {
                iso_core::iso::IrlMethod::MaxEnt => format!(
                    "lr={} iters={} horizon={}",
                    params.maxent.learning_rate, params.maxent.iterations, params.maxent.horizon
                ),
                iso_core::iso::IrlMethod::DmIrl => format!("gamma={}", params.gamma),
            };
            let reward_records = run
                .records
                .iter()
                .filter_map(|record| {
                    Some(RecoveredRewardRecord {
                        iteration: record.iteration,
                        method: method_label.to_string(),
                        hyperparams: hyperparams.clone(),
                        log_hash: record.diagnostics.log_hash?,
                        theta: record.recovered.clone()?,
                    })
                })
                .collect();
            let rows = run
                .records
                .iter()
                .map(|record| ResultRow {
                    run_id: run_id.clone(),
                    iteration: record.iteration,
                    behavior: behavior_label.clone(),
                    irl_method: method_label.to_string(),
                    cf: Some(section.connection_factor),
                    nf: Some(behavior.noise_factor()),
                    quality: record.quality,
                    wall_ms: record.diagnostics.wall_ms,
                    setup: String::new(),
                    lambda: None,
                })
                .collect();
            Ok(ReplicaOutput {
                replica,
                qualities: run.records.iter().map(|r| r.quality).collect(),
                rows,
                reward_records,
            })
        }
        Mode::Neural => {
            let neural = config.neural_config(replica_seed)?;
            let records: Vec<NeuralIterationRecord> = run_iso_neural(&neural)?;
            let rows = records
                .iter()
                .map(|record| ResultRow {
                    run_id: run_id.clone(),
                    iteration: record.iteration,
                    behavior: String::new(),
                    irl_method: String::new(),
                    cf: None,
                    nf: None,
                    quality: record.average_return,
                    wall_ms: record.wall_ms,
                    setup: record.setup.clone(),
                    lambda: Some(record.lambda),
                })
                .collect();
            Ok(ReplicaOutput {
                replica,
                qualities: records.iter().map(|r| r.average_return).collect(),
                rows,
                reward_records: Vec::new(),
            })
        }
    }
}

pub fn write_results<'a>(
    path: &Path,
    rows: impl Iterator<Item = &'a ResultRow>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| HarnessError::Format(format!("opening {}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| HarnessError::Format(format!("writing result row: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| HarnessError::Format(format!("flushing results: {e}")))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Format(format!("opening {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| HarnessError::Format(format!("reading result row: {e}")))?);
    }
    Ok(rows)
}

pub fn save_summary(path: &Path, summary: &ExperimentSummary) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, summary)
        .map_err(|e| HarnessError::Format(format!("writing summary: {e}")))?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_summary(path: &Path) -> Result<ExperimentSummary> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    serde_json::from_reader(file)
        .map_err(|e| HarnessError::Format(format!("reading summary: {e}")))
}
