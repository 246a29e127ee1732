//! Summary statistics and significance testing.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided paired t-test outcome. `p_value` is `None` when fewer than two
/// pairs exist; `degenerate` marks a constant nonzero shift (infinite t), for
/// which the p-value is reported at the machine floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

pub fn paired_t_test(before: &[f64], after: &[f64]) -> TTest {
    assert_eq!(before.len(), after.len(), "paired samples must align");
    let n = before.len();
    if n < 2 {
        return TTest {
            t: f64::NAN,
            df: 0,
            p_value: None,
            degenerate: false,
        };
    }
    let diffs: Vec<f64> = after.iter().zip(before.iter()).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    let df = n - 1;
    if var == 0.0 {
        if mean == 0.0 {
            return TTest {
                t: 0.0,
                df,
                p_value: Some(1.0),
                degenerate: false,
            };
        }
        // Zero-variance nonzero shift: t is infinite and p underflows.
        return TTest {
            t: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            df,
            p_value: Some(f64::MIN_POSITIVE),
            degenerate: true,
        };
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid t distribution");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    TTest {
        t,
        df,
        p_value: Some(p.clamp(f64::MIN_POSITIVE, 1.0)),
        degenerate: false,
    }
}

/// One-sided variant for "after exceeds before":
/// p = P(T >= t) under the null.
pub fn paired_t_test_one_sided(before: &[f64], after: &[f64]) -> TTest {
    let mut test = paired_t_test(before, after);
    if let Some(p) = test.p_value {
        if test.degenerate {
            test.p_value = Some(if test.t > 0.0 { f64::MIN_POSITIVE } else { 1.0 });
        } else if test.t.is_finite() {
            let dist = StudentsT::new(0.0, 1.0, test.df as f64).expect("valid t distribution");
            test.p_value = Some((1.0 - dist.cdf(test.t)).clamp(f64::MIN_POSITIVE, 1.0));
        } else {
            test.p_value = Some(p);
        }
    }
    test
}

/// Mean and standard error of the mean.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStat {
    pub iteration: usize,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Aggregate over replicas: per-iteration mean and SEM, the final/initial
/// improvement ratio, and the paired test between initial and final
/// qualities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub per_iteration: Vec<IterationStat>,
    pub replicas: usize,
    pub improvement_ratio: f64,
    pub t_test: TTest,
}

impl SummaryStats {
    /// `qualities[r]` is one replica's quality trace, iteration 0 first.
    /// All traces must share a length.
    pub fn from_traces(qualities: &[Vec<f64>]) -> Self {
        assert!(!qualities.is_empty(), "no replica traces");
        let len = qualities[0].len();
        assert!(qualities.iter().all(|q| q.len() == len), "ragged traces");
        let per_iteration = (0..len)
            .map(|i| {
                let column: Vec<f64> = qualities.iter().map(|q| q[i]).collect();
                let (mean, sem) = mean_sem(&column);
                IterationStat {
                    iteration: i,
                    mean,
                    sem,
                    n: column.len(),
                }
            })
            .collect::<Vec<_>>();
        let initial: Vec<f64> = qualities.iter().map(|q| q[0]).collect();
        let fin: Vec<f64> = qualities.iter().map(|q| *q.last().unwrap()).collect();
        let (initial_mean, _) = mean_sem(&initial);
        let (final_mean, _) = mean_sem(&fin);
        SummaryStats {
            per_iteration,
            replicas: qualities.len(),
            improvement_ratio: final_mean / initial_mean,
            t_test: paired_t_test(&initial, &fin),
        }
    }
}
