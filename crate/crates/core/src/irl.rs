//! Reward recovery from interaction logs.
//!
//! Two recovery routes:
//! * `maxent_irl` for unscored logs: trajectories are exponentially preferred
//!   by accrued reward, with the system dynamics as base measure. Gradient
//!   ascent on the likelihood, with model feature expectations computed by a
//!   backward partition recursion and a forward visitation pass. The model is
//!   undiscounted; partition functions are per trajectory length and per
//!   start state, weighted by the log's empirical length and first-state
//!   frequencies.
//! * `dm_irl` for scored logs: least-squares regression of the weights from
//!   discounted feature accruals, the oracle baseline. Exact scores and a
//!   full-rank design recover the true weights exactly.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::mdp::{RewardModel, TabularSystem, Trajectory};

/// MaxEnt optimizer knobs. The defaults match the tabular experiments:
/// horizon = the longest trajectory the logs may contain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxEntParams {
    /// Upper bound on trajectory length (states per trajectory).
    pub horizon: usize,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for MaxEntParams {
    fn default() -> Self {
        Self {
            horizon: 40,
            learning_rate: 0.05,
            iterations: 300,
        }
    }
}

/// Watches the gradient-norm history of accepted ascent steps; reports when
/// the norm grows tenfold over a window, the signature of a diverging run.
#[derive(Debug, Default)]
pub struct DivergenceMonitor {
    norms: Vec<f64>,
}

impl DivergenceMonitor {
    pub const WINDOW: usize = 25;

    /// Records a gradient norm; `Some((then, now))` means the norm grew more
    /// than tenfold over the window while exceeding its starting level.
    pub fn observe(&mut self, norm: f64) -> Option<(f64, f64)> {
        self.norms.push(norm);
        let n = self.norms.len();
        if n > Self::WINDOW {
            let then = self.norms[n - 1 - Self::WINDOW];
            if norm > 10.0 * then && norm > self.norms[0] {
                return Some((then, norm));
            }
        }
        None
    }
}

/// Recovers reward weights from an unscored log by gradient ascent on the
/// MaxEnt likelihood. The step size starts at `params.learning_rate` and is
/// halved whenever a step would decrease the objective (late-iteration logs
/// concentrate on few states, which raises the curvature well above what the
/// initial rate tolerates). Fails with diagnostics if the objective turns
/// non-finite, the step size collapses, or the gradient norm grows tenfold
/// over a 25-iteration window.
pub fn maxent_irl(
    trajectories: &[Trajectory],
    system: &TabularSystem,
    params: &MaxEntParams,
) -> Result<RewardModel> {
    let stats = LogStats::from_log(trajectories, system, params.horizon)?;
    let aggregate = aggregate_transition(system);
    let mut theta = Array1::<f64>::zeros(system.n_states());
    let mut objective = objective_from_stats(&theta, &stats, &aggregate);
    let mut rate = params.learning_rate;
    let mut monitor = DivergenceMonitor::default();

    for iter in 0..params.iterations {
        let grad = gradient_from_stats(&theta, &stats, &aggregate);
        let norm = grad.dot(&grad).sqrt();
        if !norm.is_finite() || !objective.is_finite() {
            return Err(CoreError::LearningFailure(format!(
                "non-finite objective ({objective}) or gradient norm ({norm}) at iteration {iter}"
            )));
        }
        if let Some((then, now)) = monitor.observe(norm) {
            return Err(CoreError::LearningFailure(format!(
                "gradient norm grew from {then:.3e} to {now:.3e} over {} iterations (at iteration {iter})",
                DivergenceMonitor::WINDOW
            )));
        }
        loop {
            let candidate = &theta + &(&grad * rate);
            let candidate_objective = objective_from_stats(&candidate, &stats, &aggregate);
            if candidate_objective >= objective - 1e-12 {
                theta = candidate;
                objective = candidate_objective;
                break;
            }
            rate *= 0.5;
            if rate < 1e-12 {
                return Err(CoreError::LearningFailure(format!(
                    "step size collapsed below 1e-12 at iteration {iter} (objective {objective:.6e}, gradient norm {norm:.3e})"
                )));
            }
        }
        // Let the rate recover slowly after a conservative stretch.
        rate = (rate * 1.1).min(params.learning_rate);
    }
    RewardModel::new(theta)
}

/// Likelihood gradient at `theta`: empirical expected feature counts minus
/// model expected feature counts. Exposed so tests can compare it against
/// finite differences of the enumerated log-likelihood.
pub fn maxent_gradient(
    theta: &Array1<f64>,
    trajectories: &[Trajectory],
    system: &TabularSystem,
    horizon: usize,
) -> Result<Array1<f64>> {
    let stats = LogStats::from_log(trajectories, system, horizon)?;
    let aggregate = aggregate_transition(system);
    Ok(gradient_from_stats(theta, &stats, &aggregate))
}

/// Log partition per start state for paths visiting `n_path_states` states:
/// `log sum over feasible paths of (prod T) * exp(sum theta)`, computed by
/// the backward recursion. Paths of one state contribute exp(theta[s]).
pub fn maxent_log_partition(
    system: &TabularSystem,
    theta: &Array1<f64>,
    n_path_states: usize,
) -> Array1<f64> {
    let aggregate = aggregate_transition(system);
    backward_log_partition(&aggregate, theta, n_path_states)
        .pop()
        .expect("n_path_states >= 1")
}

/// Model objective the gradient ascends: empirical mean accrued reward minus
/// the length- and start-weighted log partition. Finite differences of this
/// quantity equal `maxent_gradient` exactly.
pub fn maxent_objective(
    theta: &Array1<f64>,
    trajectories: &[Trajectory],
    system: &TabularSystem,
    horizon: usize,
) -> Result<f64> {
    let stats = LogStats::from_log(trajectories, system, horizon)?;
    let aggregate = aggregate_transition(system);
    Ok(objective_from_stats(theta, &stats, &aggregate))
}

fn objective_from_stats(theta: &Array1<f64>, stats: &LogStats, aggregate: &Array2<f64>) -> f64 {
    let log_z = backward_log_partition(aggregate, theta, stats.max_len);
    let mut objective = stats.mean_counts.dot(theta);
    for (&len, &weight) in &stats.length_weights {
        objective -= weight * stats.start_dist.dot(&log_z[len - 1]);
    }
    objective
}

/// Empirical sufficient statistics of a log.
struct LogStats {
    /// Mean per-trajectory state visit counts.
    mean_counts: Array1<f64>,
    /// Empirical first-state frequencies (the forward pass starts here).
    start_dist: Array1<f64>,
    /// Empirical distribution of trajectory lengths.
    length_weights: BTreeMap<usize, f64>,
    max_len: usize,
}

impl LogStats {
    fn from_log(
        trajectories: &[Trajectory],
        system: &TabularSystem,
        horizon: usize,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(CoreError::InvalidConfig("empty trajectory log".into()));
        }
        let n = system.n_states();
        let mut mean_counts = Array1::zeros(n);
        let mut start_dist = Array1::zeros(n);
        let mut length_counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut max_len = 0;
        for traj in trajectories {
            if traj.is_empty() {
                return Err(CoreError::InvalidConfig("empty trajectory in log".into()));
            }
            traj.validate(system, 1, usize::MAX.min(horizon))
                .map_err(|e| match e {
                    CoreError::InvariantViolation(msg) => CoreError::InvalidConfig(format!(
                        "log incompatible with system (horizon {horizon}): {msg}"
                    )),
                    other => other,
                })?;
            for s in traj.states() {
                mean_counts[s] += 1.0;
            }
            start_dist[traj.steps[0].0] += 1.0;
            *length_counts.entry(traj.len()).or_insert(0) += 1;
            max_len = max_len.max(traj.len());
        }
        let n_traj = trajectories.len() as f64;
        mean_counts /= n_traj;
        start_dist /= n_traj;
        let length_weights = length_counts
            .into_iter()
            .map(|(len, count)| (len, count as f64 / n_traj))
            .collect();
        Ok(Self {
            mean_counts,
            start_dist,
            length_weights,
            max_len,
        })
    }
}

/// Action-aggregated dynamics: `U[s][s'] = sum_a T(s'|s,a)`.
fn aggregate_transition(system: &TabularSystem) -> Array2<f64> {
    let n = system.n_states();
    let mut u = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..system.n_actions() {
            for &next in system.allowed(s, a) {
                u[[s, next]] += system.transition_prob(s, a, next);
            }
        }
    }
    u
}

/// Backward recursion: `Z_1(s) = exp(theta[s])`,
/// `Z_k(s) = exp(theta[s]) * sum_s' U[s][s'] Z_{k-1}(s')`, kept in log space.
/// Returns `log Z_k` for k = 1..=k_max (index k-1).
fn backward_log_partition(
    aggregate: &Array2<f64>,
    theta: &Array1<f64>,
    k_max: usize,
) -> Vec<Array1<f64>> {
    let mut table = Vec::with_capacity(k_max);
    table.push(theta.clone());
    for _ in 1..k_max {
        let prev: &Array1<f64> = table.last().unwrap();
        let shift = prev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled = prev.mapv(|z| (z - shift).exp());
        let propagated = aggregate.dot(&scaled);
        table.push(theta + &propagated.mapv(|p| p.ln() + shift));
    }
    table
}

fn gradient_from_stats(
    theta: &Array1<f64>,
    stats: &LogStats,
    aggregate: &Array2<f64>,
) -> Array1<f64> {
    let log_z = backward_log_partition(aggregate, theta, stats.max_len);
    let mut model_counts = Array1::<f64>::zeros(theta.len());
    for (&len, &weight) in &stats.length_weights {
        accumulate_expected_counts(theta, aggregate, &log_z, &stats.start_dist, len, weight, &mut model_counts);
    }
    &stats.mean_counts - &model_counts
}

/// Forward visitation pass for one trajectory length. The position-t step
/// kernel is `T`-weighted and tilted by the remaining-step partitions:
/// `D_{t+1}(s') ∝ sum_s D_t(s) exp(theta[s] - logZ_k(s)) U[s][s'] exp(logZ_{k-1}(s'))`
/// with `k = len - t` states remaining. Expected counts are the summed
/// visitation marginals.
fn accumulate_expected_counts(
    theta: &Array1<f64>,
    aggregate: &Array2<f64>,
    log_z: &[Array1<f64>],
    start_dist: &Array1<f64>,
    len: usize,
    weight: f64,
    counts: &mut Array1<f64>,
) {
    let mut d = start_dist.clone();
    counts.scaled_add(weight, &d);
    for t in 0..len - 1 {
        let k = len - t;
        let z_here = &log_z[k - 1];
        let z_next = &log_z[k - 2];
        let shift = z_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let outgoing =
            Array1::from_iter(d.iter().zip(theta.iter()).zip(z_here.iter()).map(
                |((&mass, &th), &z)| {
                    if mass == 0.0 {
                        0.0
                    } else {
                        mass * (th - z + shift).exp()
                    }
                },
            ));
        let mut next = aggregate.t().dot(&outgoing);
        ndarray::Zip::from(&mut next).and(z_next).for_each(|v, &z| {
            *v *= (z - shift).exp();
        });
        // Each step kernel is stochastic; renormalize to absorb round-off.
        let total = next.sum();
        d = next / total;
        counts.scaled_add(weight, &d);
    }
}

/// Result of scored-trajectory regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DmIrlResult {
    pub reward: RewardModel,
    /// Set when the accrued-feature design matrix is numerically
    /// rank-deficient; the returned weights are then the minimum-norm fit.
    pub rank_deficient: bool,
}

/// Ridge damping for the normal equations; small enough to keep full-rank
/// recovery exact to well below 1e-6.
const DM_IRL_RIDGE: f64 = 1e-10;

/// Regresses reward weights from scored trajectories:
/// `score = theta . psi(traj)` with `psi = sum_t gamma^t phi(S_t)`, solved by
/// damped normal equations. Unvisited states get weight zero.
pub fn dm_irl(scored: &[Trajectory], n_states: usize, gamma: f64) -> Result<DmIrlResult> {
    if scored.is_empty() {
        return Err(CoreError::InvalidConfig("empty scored log".into()));
    }
    let mut gram = Array2::<f64>::zeros((n_states, n_states));
    let mut rhs = Array1::<f64>::zeros(n_states);
    let mut psi = Array1::<f64>::zeros(n_states);
    for traj in scored {
        let score = traj.score.ok_or_else(|| {
            CoreError::InvalidConfig("dm_irl requires scored trajectories".into())
        })?;
        psi.fill(0.0);
        let mut w = 1.0;
        for s in traj.states() {
            if s >= n_states {
                return Err(CoreError::InvalidConfig(format!(
                    "trajectory state {s} out of range for {n_states} states"
                )));
            }
            psi[s] += w;
            w *= gamma;
        }
        // Rank-one update of the normal equations.
        for (i, &pi) in psi.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            rhs[i] += pi * score;
            for (j, &pj) in psi.iter().enumerate() {
                gram[[i, j]] += pi * pj;
            }
        }
    }

    let scale = gram.diag().iter().cloned().fold(0.0, f64::max).max(1.0);
    for i in 0..n_states {
        gram[[i, i]] += DM_IRL_RIDGE;
    }
    let (theta, min_pivot) = cholesky_solve(gram, &rhs)?;
    Ok(DmIrlResult {
        reward: RewardModel::new(theta)?,
        rank_deficient: min_pivot < 1e-8 * scale,
    })
}

/// Cholesky factorization and solve for a symmetric positive-definite system;
/// returns the solution and the smallest pivot encountered.
fn cholesky_solve(mut a: Array2<f64>, b: &Array1<f64>) -> Result<(Array1<f64>, f64)> {
    let n = b.len();
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d <= 0.0 {
            return Err(CoreError::LearningFailure(format!(
                "normal equations lost positive definiteness at pivot {j}"
            )));
        }
        min_pivot = min_pivot.min(d);
        let l_jj = d.sqrt();
        a[[j, j]] = l_jj;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / l_jj;
        }
    }
    // Forward then backward substitution.
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let upd = a[[i, k]] * y[k];
            y[i] -= upd;
        }
        y[i] /= a[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let upd = a[[k, i]] * y[k];
            y[i] -= upd;
        }
        y[i] /= a[[i, i]];
    }
    Ok((y, min_pivot))
}
