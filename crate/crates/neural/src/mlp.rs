//! Multi-layer perceptrons with manual backpropagation and Adam.
//!
//! Batches are row-major: `[batch, dim]`. Weights are `[out, in]`, so a layer
//! computes `y = act(x W^T + b)`. Gradients are checked against central
//! finite differences in the test suite; keep forward and backward in sync.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)); biases zero.
    Xavier,
    /// Uniform(low, high) on weights and biases.
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.dim()))
                .collect(),
            biases: mlp
                .layers
                .iter()
                .map(|l| Array1::zeros(l.biases.len()))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|x| x * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|x| x * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Activations of every layer during a forward pass; `stages[0]` is the
/// input batch, `stages[i + 1]` the output of layer i.
pub struct ForwardCache {
    pub stages: Vec<Array2<f64>>,
}

impl Mlp {
    /// Builds a network with the given layer sizes; hidden layers use
    /// `hidden` activation, the output layer is linear.
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, init: Init, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for i in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let activation = if i + 2 == sizes.len() {
                Activation::Linear
            } else {
                hidden
            };
            let (weights, biases) = match init {
                Init::Xavier => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                        rng.random_range(-bound..bound)
                    });
                    (w, Array1::zeros(fan_out))
                }
                Init::Uniform { low, high } => {
                    let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                        rng.random_range(low..high)
                    });
                    let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(low..high));
                    (w, b)
                }
            };
            layers.push(Layer {
                weights,
                biases,
                activation,
            });
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        let batch = x.view().insert_axis(Axis(0)).to_owned();
        self.forward_batch(&batch).index_axis(Axis(0), 0).to_owned()
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = apply(layer, &h);
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let mut stages = Vec::with_capacity(self.layers.len() + 1);
        stages.push(x.clone());
        for layer in &self.layers {
            let next = apply(layer, stages.last().unwrap());
            stages.push(next);
        }
        let out = stages.last().unwrap().clone();
        (out, ForwardCache { stages })
    }

    /// Backpropagates `grad_out` (dLoss/dOutput, `[batch, out]`) through the
    /// cached forward pass; returns parameter gradients and dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let output = &cache.stages[i + 1];
            match layer.activation {
                Activation::Tanh => delta = &delta * &output.mapv(|y| 1.0 - y * y),
                Activation::Linear => {}
            }
            let input = &cache.stages[i];
            grads.weights[i] = delta.t().dot(input);
            grads.biases[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&layer.weights);
            }
        }
        (grads, delta.dot(&self.layers[0].weights))
    }

    /// Flattened copy of all parameters (for checkpoints and tests).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.biases.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in layer.biases.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
    }
}

fn apply(layer: &Layer, x: &Array2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weights.t());
    z += &layer.biases;
    match layer.activation {
        Activation::Tanh => z.mapv_inplace(f64::tanh),
        Activation::Linear => {}
    }
    z
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: MlpGrads,
    v: MlpGrads,
}

impl Adam {
    pub fn new(mlp: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: MlpGrads::zeros_like(mlp),
            v: MlpGrads::zeros_like(mlp),
        }
    }

    /// One descent step along `grads` (gradients of the loss).
    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let b1_corr = 1.0 - self.beta1.powi(self.t as i32);
        let b2_corr = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, beta1, beta2, eps) = (self.learning_rate, self.beta1, self.beta2, self.epsilon);
        let moment_update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / b1_corr;
            let v_hat = *v / b2_corr;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut self.m.weights[i])
                .and(&mut self.v.weights[i])
                .and(&grads.weights[i])
                .for_each(moment_update);
            ndarray::Zip::from(&mut layer.biases)
                .and(&mut self.m.biases[i])
                .and(&mut self.v.biases[i])
                .and(&grads.biases[i])
                .for_each(moment_update);
        }
    }
}
