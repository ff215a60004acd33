//! Minimal neural-network engine: LSTM cell, convolution/pooling, dense
//! layers, softmax cross-entropy, exact analytic gradients, Adam, and a
//! deterministic training loop with loss-curve capture.
//!
//! Everything is 64-bit and single-threaded per training run; determinism
//! comes from seeded initialization, seeded minibatch sampling and a fixed
//! summation order. Independent runs may execute in parallel.

pub mod adam;
pub mod checkpoint;
pub mod cnn;
pub mod lstm;
pub mod train;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cnn::{cnn_forward, cnn_grad, conv2d_forward, maxpool2, CnnArch, CnnParams, ConvLayer};
pub use lstm::{lstm_cell_forward, lstm_classify_forward, lstm_grad, LstmClassifier, LstmParams};
pub use train::{
    train_classifier, Dataset, LossCurve, MlpParams, ModelParams, ModelSpec, TrainConfig,
    TrainOutcome,
};

/// Activation used for the LSTM candidate state.
///
/// The sigmoid candidate is the published form and the default; tanh is the
/// common convention and available as a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateActivation {
    #[default]
    Sigmoid,
    Tanh,
}

impl CandidateActivation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            CandidateActivation::Sigmoid => sigmoid(x),
            CandidateActivation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation value.
    pub(crate) fn derivative_from_value(self, value: f64) -> f64 {
        match self {
            CandidateActivation::Sigmoid => value * (1.0 - value),
            CandidateActivation::Tanh => 1.0 - value * value,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Array1<f64> = logits.mapv(|z| (z - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Cross-entropy of one sample computed jointly with softmax via log-sum-exp.
///
/// Returns `(loss, probabilities)`.
pub fn cross_entropy_from_logits(logits: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum_exp = max + logits.mapv(|z| (z - max).exp()).sum().ln();
    let loss = log_sum_exp - logits[label];
    let probs = logits.mapv(|z| (z - log_sum_exp).exp());
    (loss, probs)
}

/// Fully connected layer, `weights` shaped `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn init(outputs: usize, inputs: usize, rng: &mut impl Rng) -> DenseLayer {
        DenseLayer {
            weights: xavier_matrix(outputs, inputs, inputs, outputs, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weights: Array2::zeros(self.weights.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn forward(&self, input: &Array1<f64>) -> Array1<f64> {
        self.weights.dot(input) + &self.bias
    }
}

/// Backward pass of a dense layer: accumulates weight/bias gradients and
/// returns the gradient with respect to the input.
pub(crate) fn dense_backward(
    layer: &DenseLayer,
    input: &Array1<f64>,
    d_out: &Array1<f64>,
    grads: &mut DenseLayer,
) -> Array1<f64> {
    for (r, &g) in d_out.iter().enumerate() {
        grads.weights.row_mut(r).scaled_add(g, input);
    }
    grads.bias += d_out;
    layer.weights.t().dot(d_out)
}

/// Uniform Xavier matrix with an explicit fan specification; rows are drawn
/// in row-major order so initialization is reproducible.
pub(crate) fn xavier_matrix(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Array2::from_shape_vec((rows, cols), data).expect("matrix shape")
}
