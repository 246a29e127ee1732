//! Stochastic policy heads over MLP trunks.
//!
//! The categorical head drives the discrete user; the diagonal-Gaussian head
//! drives the continuous system. Both expose log-probabilities, entropies,
//! and an analytic backward pass that turns per-sample coefficient vectors
//! `dLoss/dlogp` and `dLoss/dH` into parameter gradients.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mlp::{Mlp, MlpGrads};

const LN_2PI: f64 = 1.8378770664093453;

/// Common surface the PPO loop needs from a policy.
pub trait StochasticPolicy {
    type Action: Clone;

    fn act<R: Rng>(&self, obs: &Array1<f64>, rng: &mut R) -> (Self::Action, f64);

    /// Log-probabilities and entropies of given actions at given
    /// observations.
    fn evaluate(&self, obs: &Array2<f64>, actions: &[Self::Action]) -> (Array1<f64>, Array1<f64>);

    /// Parameter gradients of `sum_i dlogp[i] * logp_i + dent[i] * H_i`.
    fn backward(
        &self,
        obs: &Array2<f64>,
        actions: &[Self::Action],
        dlogp: &Array1<f64>,
        dent: &Array1<f64>,
    ) -> MlpGrads;

    /// Mean anchor divergence over the batch and the parameter gradients of
    /// `coeff * mean_i KL(self(obs_i) || anchor(obs_i))`, for policies that
    /// support an analytic anchor penalty.
    fn anchor_kl_backward(
        &self,
        _obs: &Array2<f64>,
        _anchor: &Self,
        _coeff: f64,
    ) -> Option<(f64, MlpGrads)> {
        None
    }

    fn net(&self) -> &Mlp;
    fn net_mut(&mut self) -> &mut Mlp;
}

/// Discrete policy: logits from the trunk, softmax sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    pub net: Mlp,
}

impl CategoricalPolicy {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn action_probs(&self, obs: &Array1<f64>) -> Array1<f64> {
        softmax_row(&self.net.forward(obs))
    }

    pub fn log_prob(&self, obs: &Array1<f64>, action: usize) -> f64 {
        let logits = self.net.forward(obs);
        let lse = log_sum_exp(logits.as_slice().unwrap());
        logits[action] - lse
    }
}

impl StochasticPolicy for CategoricalPolicy {
    type Action = usize;

    fn act<R: Rng>(&self, obs: &Array1<f64>, rng: &mut R) -> (usize, f64) {
        let logits = self.net.forward(obs);
        let lse = log_sum_exp(logits.as_slice().unwrap());
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = logits.len() - 1;
        for (a, &logit) in logits.iter().enumerate() {
            acc += (logit - lse).exp();
            if u < acc {
                chosen = a;
                break;
            }
        }
        (chosen, logits[chosen] - lse)
    }

    fn evaluate(&self, obs: &Array2<f64>, actions: &[usize]) -> (Array1<f64>, Array1<f64>) {
        let logits = self.net.forward_batch(obs);
        let mut logp = Array1::zeros(actions.len());
        let mut entropy = Array1::zeros(actions.len());
        for (i, row) in logits.outer_iter().enumerate() {
            let lse = log_sum_exp(row.as_slice().unwrap());
            logp[i] = row[actions[i]] - lse;
            entropy[i] = -row
                .iter()
                .map(|&l| {
                    let lp = l - lse;
                    lp.exp() * lp
                })
                .sum::<f64>();
        }
        (logp, entropy)
    }

    fn backward(
        &self,
        obs: &Array2<f64>,
        actions: &[usize],
        dlogp: &Array1<f64>,
        dent: &Array1<f64>,
    ) -> MlpGrads {
        let (logits, cache) = self.net.forward_cached(obs);
        let mut grad_logits = Array2::zeros(logits.dim());
        for (i, row) in logits.outer_iter().enumerate() {
            let lse = log_sum_exp(row.as_slice().unwrap());
            let mut h = 0.0;
            for &l in row.iter() {
                let lp = l - lse;
                h -= lp.exp() * lp;
            }
            for j in 0..row.len() {
                let p = (row[j] - lse).exp();
                let indicator = if j == actions[i] { 1.0 } else { 0.0 };
                // dlogp_a/dlogit_j = 1[a=j] - p_j; dH/dlogit_j = -p_j (logp_j + H).
                grad_logits[[i, j]] = dlogp[i] * (indicator - p)
                    + dent[i] * (-p * ((row[j] - lse) + h));
            }
        }
        self.net.backward(&cache, &grad_logits).0
    }

    fn net(&self) -> &Mlp {
        &self.net
    }

    fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }
}

/// Diagonal-Gaussian policy: the trunk outputs `[mean, raw]` and the
/// log-variance is a sigmoid squash of `raw` onto `[lv_min, lv_max]`, smooth
/// everywhere so gradients stay exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub dim: usize,
    pub logvar_min: f64,
    pub logvar_max: f64,
}

impl GaussianPolicy {
    pub fn new(net: Mlp, dim: usize) -> Self {
        assert_eq!(net.output_dim(), 2 * dim);
        Self {
            net,
            dim,
            logvar_min: -5.0,
            logvar_max: 2.0,
        }
    }

    /// Mean and log-variance at one observation.
    pub fn distribution(&self, obs: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let out = self.net.forward(obs);
        self.split(&out)
    }

    fn split(&self, out: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let mean = out.slice(ndarray::s![..self.dim]).to_owned();
        let logvar = out
            .slice(ndarray::s![self.dim..])
            .mapv(|raw| self.squash(raw));
        (mean, logvar)
    }

    fn squash(&self, raw: f64) -> f64 {
        self.logvar_min + (self.logvar_max - self.logvar_min) * sigmoid(raw)
    }

    pub fn log_density(mean: &Array1<f64>, logvar: &Array1<f64>, x: &Array1<f64>) -> f64 {
        let mut lp = 0.0;
        for i in 0..mean.len() {
            let var = logvar[i].exp();
            let d = x[i] - mean[i];
            lp -= 0.5 * (d * d / var + logvar[i] + LN_2PI);
        }
        lp
    }

    pub fn entropy_of(logvar: &Array1<f64>) -> f64 {
        logvar.iter().map(|lv| 0.5 * (lv + LN_2PI + 1.0)).sum()
    }

    /// Analytic KL(self(obs) || other(obs)) between the two diagonal
    /// Gaussians induced at the same observation.
    pub fn kl_at(&self, other: &GaussianPolicy, obs: &Array1<f64>) -> f64 {
        let (m1, lv1) = self.distribution(obs);
        let (m2, lv2) = other.distribution(obs);
        kl_diag_gaussians(&m1, &lv1, &m2, &lv2)
    }
}

/// KL(N(m1, diag e^lv1) || N(m2, diag e^lv2)).
pub fn kl_diag_gaussians(
    m1: &Array1<f64>,
    lv1: &Array1<f64>,
    m2: &Array1<f64>,
    lv2: &Array1<f64>,
) -> f64 {
    let mut kl = 0.0;
    for i in 0..m1.len() {
        let v1 = lv1[i].exp();
        let v2 = lv2[i].exp();
        let d = m1[i] - m2[i];
        kl += 0.5 * ((v1 + d * d) / v2 - 1.0 + lv2[i] - lv1[i]);
    }
    kl
}

impl StochasticPolicy for GaussianPolicy {
    type Action = Array1<f64>;

    fn act<R: Rng>(&self, obs: &Array1<f64>, rng: &mut R) -> (Array1<f64>, f64) {
        let (mean, logvar) = self.distribution(obs);
        let mut x = Array1::zeros(self.dim);
        for i in 0..self.dim {
            let eps: f64 = rng.sample(StandardNormal);
            x[i] = mean[i] + (0.5 * logvar[i]).exp() * eps;
        }
        let lp = Self::log_density(&mean, &logvar, &x);
        (x, lp)
    }

    fn evaluate(&self, obs: &Array2<f64>, actions: &[Array1<f64>]) -> (Array1<f64>, Array1<f64>) {
        let out = self.net.forward_batch(obs);
        let mut logp = Array1::zeros(actions.len());
        let mut entropy = Array1::zeros(actions.len());
        for (i, row) in out.outer_iter().enumerate() {
            let (mean, logvar) = self.split(&row.to_owned());
            logp[i] = Self::log_density(&mean, &logvar, &actions[i]);
            entropy[i] = Self::entropy_of(&logvar);
        }
        (logp, entropy)
    }

    fn backward(
        &self,
        obs: &Array2<f64>,
        actions: &[Array1<f64>],
        dlogp: &Array1<f64>,
        dent: &Array1<f64>,
    ) -> MlpGrads {
        let (out, cache) = self.net.forward_cached(obs);
        let mut grad_out = Array2::zeros(out.dim());
        let span = self.logvar_max - self.logvar_min;
        for (i, row) in out.outer_iter().enumerate() {
            for j in 0..self.dim {
                let mean = row[j];
                let raw = row[self.dim + j];
                let sig = sigmoid(raw);
                let logvar = self.logvar_min + span * sig;
                let var = logvar.exp();
                let d = actions[i][j] - mean;
                // dlogp/dmean = (x - mean)/var
                grad_out[[i, j]] = dlogp[i] * d / var;
                // dlogp/dlogvar = 0.5 (d^2/var - 1); dH/dlogvar = 0.5;
                // chain through the sigmoid squash.
                let dlv_draw = span * sig * (1.0 - sig);
                grad_out[[i, self.dim + j]] = (dlogp[i] * 0.5 * (d * d / var - 1.0)
                    + dent[i] * 0.5)
                    * dlv_draw;
            }
        }
        self.net.backward(&cache, &grad_out).0
    }

    /// KL(self || anchor) at each observation, differentiated through this
    /// policy's mean and squashed log-variance. The anchor is frozen.
    fn anchor_kl_backward(
        &self,
        obs: &Array2<f64>,
        anchor: &Self,
        coeff: f64,
    ) -> Option<(f64, MlpGrads)> {
        let (out, cache) = self.net.forward_cached(obs);
        let anchor_out = anchor.net.forward_batch(obs);
        let n = obs.nrows() as f64;
        let span = self.logvar_max - self.logvar_min;
        let anchor_span = anchor.logvar_max - anchor.logvar_min;
        let mut grad_out = Array2::zeros(out.dim());
        let mut total_kl = 0.0;
        for i in 0..obs.nrows() {
            for j in 0..self.dim {
                let mean = out[[i, j]];
                let raw = out[[i, self.dim + j]];
                let sig = sigmoid(raw);
                let lv = self.logvar_min + span * sig;
                let var = lv.exp();
                let anchor_mean = anchor_out[[i, j]];
                let anchor_lv =
                    anchor.logvar_min + anchor_span * sigmoid(anchor_out[[i, self.dim + j]]);
                let anchor_var = anchor_lv.exp();
                let d = mean - anchor_mean;
                total_kl += 0.5 * ((var + d * d) / anchor_var - 1.0 + anchor_lv - lv);
                // dKL/dmean = d / anchor_var; dKL/dlv = 0.5 (var/anchor_var - 1).
                grad_out[[i, j]] += coeff / n * d / anchor_var;
                grad_out[[i, self.dim + j]] +=
                    coeff / n * 0.5 * (var / anchor_var - 1.0) * span * sig * (1.0 - sig);
            }
        }
        let grads = self.net.backward(&cache, &grad_out).0;
        Some((total_kl / n, grads))
    }

    fn net(&self) -> &Mlp {
        &self.net
    }

    fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(logits: &Array1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits.as_slice().unwrap());
    logits.mapv(|l| (l - lse).exp())
}

/// One-hot concatenation `[state, onehot(action)]`, the composite
/// observation used throughout the network-based world.
pub fn composite_obs(state: &Array1<f64>, action: usize, n_actions: usize) -> Array1<f64> {
    let mut obs = Array1::zeros(state.len() + n_actions);
    obs.slice_mut(ndarray::s![..state.len()]).assign(state);
    obs[state.len() + action] = 1.0;
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, Init};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn categorical_probs_normalize_and_sample() {
        let mut r = rng(1);
        let policy = CategoricalPolicy::new(Mlp::new(
            &[3, 16, 4],
            Activation::Tanh,
            Init::Xavier,
            &mut r,
        ));
        let obs = array![0.3, -0.7, 1.1];
        let probs = policy.action_probs(&obs);
        assert_abs_diff_eq!(probs.sum(), 1.0, epsilon = 1e-12);
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            let (a, lp) = policy.act(&obs, &mut r);
            counts[a] += 1;
            assert_abs_diff_eq!(lp, probs[a].ln(), epsilon = 1e-12);
        }
        for a in 0..4 {
            let freq = counts[a] as f64 / 20_000.0;
            let sem = (probs[a] * (1.0 - probs[a]) / 20_000.0).sqrt();
            assert!((freq - probs[a]).abs() < 4.0 * sem.max(1e-3));
        }
    }

    #[test]
    fn categorical_backward_matches_finite_differences() {
        let mut r = rng(2);
        let mut policy = CategoricalPolicy::new(Mlp::new(
            &[2, 6, 3],
            Activation::Tanh,
            Init::Xavier,
            &mut r,
        ));
        let obs = Array2::from_shape_fn((5, 2), |_| r.random_range(-1.0..1.0));
        let actions = vec![0usize, 2, 1, 1, 0];
        let dlogp = Array1::from_shape_fn(5, |_| r.random_range(-1.0..1.0));
        let dent = Array1::from_shape_fn(5, |_| r.random_range(-1.0..1.0));
        let grads = policy.backward(&obs, &actions, &dlogp, &dent);

        let objective = |p: &CategoricalPolicy| {
            let (lp, h) = p.evaluate(&obs, &actions);
            lp.dot(&dlogp) + h.dot(&dent)
        };
        let flat = policy.net.flat_params();
        let analytic: Vec<f64> = grads
            .weights
            .iter()
            .zip(grads.biases.iter())
            .flat_map(|(w, b)| w.iter().chain(b.iter()).cloned().collect::<Vec<_>>())
            .collect();
        let eps = 1e-6;
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += eps;
            policy.net.set_flat_params(&plus);
            let f_plus = objective(&policy);
            let mut minus = flat.clone();
            minus[k] -= eps;
            policy.net.set_flat_params(&minus);
            let f_minus = objective(&policy);
            policy.net.set_flat_params(&flat);
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {k}: {} vs {}", analytic[k], fd);
        }
    }

    #[test]
    fn gaussian_backward_matches_finite_differences() {
        let mut r = rng(3);
        let dim = 2;
        let mut policy = GaussianPolicy::new(
            Mlp::new(&[3, 6, 2 * dim], Activation::Tanh, Init::Xavier, &mut r),
            dim,
        );
        let obs = Array2::from_shape_fn((4, 3), |_| r.random_range(-1.0..1.0));
        let actions: Vec<Array1<f64>> = (0..4)
            .map(|_| Array1::from_shape_fn(dim, |_| r.random_range(-1.5..1.5)))
            .collect();
        let dlogp = Array1::from_shape_fn(4, |_| r.random_range(-1.0..1.0));
        let dent = Array1::from_shape_fn(4, |_| r.random_range(-1.0..1.0));
        let grads = policy.backward(&obs, &actions, &dlogp, &dent);

        let objective = |p: &GaussianPolicy| {
            let (lp, h) = p.evaluate(&obs, &actions);
            lp.dot(&dlogp) + h.dot(&dent)
        };
        let flat = policy.net.flat_params();
        let analytic: Vec<f64> = grads
            .weights
            .iter()
            .zip(grads.biases.iter())
            .flat_map(|(w, b)| w.iter().chain(b.iter()).cloned().collect::<Vec<_>>())
            .collect();
        let eps = 1e-6;
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += eps;
            policy.net.set_flat_params(&plus);
            let f_plus = objective(&policy);
            let mut minus = flat.clone();
            minus[k] -= eps;
            policy.net.set_flat_params(&minus);
            let f_minus = objective(&policy);
            policy.net.set_flat_params(&flat);
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {k}: {} vs {}", analytic[k], fd);
        }
    }

    #[test]
    fn gaussian_density_integrates_to_one_over_six_sigma_box() {
        // Monte-Carlo integral of the density over a +/-6 sigma box around
        // the mean; random parameter draws, seeded sampling.
        for (seed, dim) in [(11u64, 1usize), (13, 3)] {
            let mut r = rng(seed);
            let policy = GaussianPolicy::new(
                Mlp::new(&[2, 8, 2 * dim], Activation::Tanh, Init::Xavier, &mut r),
                dim,
            );
            let obs = Array1::from_shape_fn(2, |_| r.random_range(-1.0..1.0));
            let (mean, logvar) = policy.distribution(&obs);
            let sigma = logvar.mapv(|lv| (0.5 * lv).exp());
            let mut volume = 1.0;
            for i in 0..dim {
                volume *= 12.0 * sigma[i];
            }
            let n = 1_000_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let x = Array1::from_shape_fn(dim, |i| {
                    mean[i] + sigma[i] * r.random_range(-6.0..6.0)
                });
                acc += GaussianPolicy::log_density(&mean, &logvar, &x).exp();
            }
            let integral = volume * acc / n as f64;
            assert!(
                integral >= 0.99 && integral < 1.01,
                "dim {dim}: integral {integral}"
            );
        }
    }

    #[test]
    fn logvar_stays_in_bounds() {
        let mut r = rng(7);
        let policy = GaussianPolicy::new(
            Mlp::new(&[4, 8, 6], Activation::Tanh, Init::Xavier, &mut r),
            3,
        );
        for _ in 0..50 {
            let obs = Array1::from_shape_fn(4, |_| r.random_range(-50.0..50.0));
            let (_, logvar) = policy.distribution(&obs);
            assert!(logvar.iter().all(|&lv| (-5.0..=2.0).contains(&lv)));
        }
    }

    #[test]
    fn kl_is_zero_between_identical_distributions() {
        let m = array![0.3, -0.2];
        let lv = array![-1.0, 0.5];
        assert_abs_diff_eq!(kl_diag_gaussians(&m, &lv, &m, &lv), 0.0, epsilon = 1e-14);
        // Hand value: KL(N(0,1) || N(1,1)) = 0.5.
        let kl = kl_diag_gaussians(&array![0.0], &array![0.0], &array![1.0], &array![0.0]);
        assert_abs_diff_eq!(kl, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn composite_obs_layout() {
        let obs = composite_obs(&array![0.5, -0.5], 2, 4);
        assert_eq!(obs, array![0.5, -0.5, 0.0, 0.0, 1.0, 0.0]);
    }
}
