//! Per-figure CSV emission.
//!
//! One CSV per curve — a (connection factor, behavior, method) cell for
//! tabular results, a (lambda, setup) cell for network-based ones — holding
//! `iteration, mean, sem` rows recomputed from the raw records. An `index.csv`
//! lists every emitted curve and is written (headers only) even when the
//! results are empty.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::experiment::ResultRow;
use crate::stats::mean_sem;
use crate::Result;

/// Groups rows into curves and writes one CSV per curve plus an index.
/// Returns the paths written (the index last).
pub fn emit_plot_data(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut curves: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        curves.entry(curve_key(row)).or_default().push(row);
    }

    let mut written = Vec::with_capacity(curves.len() + 1);
    let mut index_lines = Vec::with_capacity(curves.len());
    for (key, rows) in &curves {
        let mut by_iteration: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for row in rows {
            by_iteration.entry(row.iteration).or_default().push(row.quality);
        }
        let path = out_dir.join(format!("{key}.csv"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(file, "iteration,mean,sem")?;
        for (iteration, qualities) in &by_iteration {
            let (mean, sem) = mean_sem(qualities);
            writeln!(file, "{iteration},{mean},{sem}")?;
        }
        index_lines.push(format!("{key}.csv,{key},{}", by_iteration.len()));
        written.push(path);
    }

    let index = out_dir.join("index.csv");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&index)?);
    writeln!(file, "file,curve,points")?;
    for line in index_lines {
        writeln!(file, "{line}")?;
    }
    written.push(index);
    Ok(written)
}

fn curve_key(row: &ResultRow) -> String {
    if row.setup.is_empty() {
        format!(
            "cf{}-{}-{}",
            row.cf.map(|c| c.to_string()).unwrap_or_default(),
            row.behavior,
            row.irl_method
        )
    } else {
        format!(
            "lambda{}-{}",
            row.lambda.map(|l| l.to_string()).unwrap_or_default(),
            row.setup
        )
    }
}
