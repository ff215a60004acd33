//! Deterministic training loop with loss-curve capture.
//!
//! One run is single-threaded: seeded initialization, seeded minibatch
//! sampling with replacement, Adam updates, and full-training-set mean
//! cross-entropy recorded every `loss_record_stride` steps. The recorded loss
//! is a function of the parameters alone, so a zero learning rate yields an
//! exactly flat curve and reruns with one seed are bit-identical.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::cnn::{cnn_forward, cnn_grad, CnnArch, CnnParams};
use super::lstm::{lstm_classify_forward, lstm_grad, LstmClassifier};
use super::{
    cross_entropy_from_logits, dense_backward, relu, softmax, CandidateActivation, DenseLayer,
};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Optimizer hyperparameters, split sizes, seeds and bookkeeping strides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub rng_seed: u64,
    pub loss_record_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 0.001,
            iterations: 5000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            rng_seed: 0,
            loss_record_stride: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig { detail: "batch_size must be >= 1".into() });
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig { detail: "iterations must be >= 1".into() });
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig { detail: "learning_rate must be >= 0".into() });
        }
        if self.loss_record_stride < 1 {
            return Err(Error::InvalidConfig { detail: "loss_record_stride must be >= 1".into() });
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_eps,
        }
    }
}

/// Recorded training-loss trace; iterations strictly increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub iterations: Vec<usize>,
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

/// Labeled image collection; labels are class indices 0 or 1.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn push(&mut self, image: Array2<f64>, label: usize) {
        self.images.push(image);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn image_dims(&self) -> Result<(usize, usize)> {
        let first = self.images.first().ok_or(Error::InvalidConfig {
            detail: "dataset is empty".into(),
        })?;
        let dims = first.dim();
        if self.images.iter().any(|im| im.dim() != dims) {
            return Err(Error::DimensionMismatch { context: "dataset images differ in size".into() });
        }
        Ok(dims)
    }

    fn validate_for_training(&self) -> Result<()> {
        self.image_dims()?;
        if self.labels.len() != self.images.len() {
            return Err(Error::DimensionMismatch {
                context: format!("{} images vs {} labels", self.images.len(), self.labels.len()),
            });
        }
        let has0 = self.labels.iter().any(|&l| l == 0);
        let has1 = self.labels.iter().any(|&l| l == 1);
        if !(has0 && has1) {
            return Err(Error::InvalidConfig {
                detail: "training set must contain both classes".into(),
            });
        }
        Ok(())
    }
}

/// Which classifier to train. Images feed the LSTM as row sequences
/// (T = height, input dim = width); the MLP flattens them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Lstm {
        hidden_size: usize,
        #[serde(default)]
        candidate: CandidateActivation,
    },
    Cnn {
        #[serde(default)]
        arch: CnnArch,
    },
    Mlp { hidden_size: usize },
}

/// Two-layer dense classifier used by small-scale tests and sanity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

impl MlpParams {
    fn forward(&self, image: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let flat = flatten_image(image);
        if flat.len() != self.fc1.weights.dim().1 {
            return Err(Error::DimensionMismatch {
                context: format!("image {} vs mlp input {}", flat.len(), self.fc1.weights.dim().1),
            });
        }
        let hidden = self.fc1.forward(&flat).mapv(relu);
        Ok(softmax(&self.fc2.forward(&hidden)))
    }

    fn grad(&self, batch: &[(ArrayView2<'_, f64>, usize)]) -> Result<(f64, MlpParams)> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig { detail: "empty batch".into() });
        }
        let mut grads =
            MlpParams { fc1: self.fc1.zeros_like(), fc2: self.fc2.zeros_like() };
        let mut total = 0.0;
        for (image, label) in batch {
            let flat = flatten_image(*image);
            let pre = self.fc1.forward(&flat);
            let hidden = pre.mapv(relu);
            let logits = self.fc2.forward(&hidden);
            let (loss, probs) = cross_entropy_from_logits(&logits, *label);
            total += loss;
            let mut d_logits = probs;
            d_logits[*label] -= 1.0;
            let d_hidden = dense_backward(&self.fc2, &hidden, &d_logits, &mut grads.fc2);
            let d_pre = &d_hidden * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            dense_backward(&self.fc1, &flat, &d_pre, &mut grads.fc1);
        }
        let scale = 1.0 / batch.len() as f64;
        for layer in [&mut grads.fc1, &mut grads.fc2] {
            layer.weights.mapv_inplace(|v| v * scale);
            layer.bias.mapv_inplace(|v| v * scale);
        }
        Ok((total * scale, grads))
    }
}

fn flatten_image(image: ArrayView2<'_, f64>) -> Array1<f64> {
    Array1::from_iter(image.iter().cloned())
}

/// Trained parameters for any of the supported models.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Lstm(LstmClassifier),
    Cnn(Box<CnnParams>),
    Mlp(MlpParams),
}

impl ModelParams {
    pub fn init(spec: &ModelSpec, image_dims: (usize, usize), rng: &mut impl Rng) -> Result<Self> {
        let (h, w) = image_dims;
        match spec {
            ModelSpec::Lstm { hidden_size, candidate } => {
                if *hidden_size == 0 || w == 0 {
                    return Err(Error::InvalidConfig { detail: "lstm sizes must be >= 1".into() });
                }
                Ok(ModelParams::Lstm(LstmClassifier::init(*hidden_size, w, 2, *candidate, rng)))
            }
            ModelSpec::Cnn { arch } => {
                if h != w {
                    return Err(Error::InvalidConfig {
                        detail: format!("cnn expects square images, got {}x{}", h, w),
                    });
                }
                Ok(ModelParams::Cnn(Box::new(CnnParams::init(*arch, h, rng)?)))
            }
            ModelSpec::Mlp { hidden_size } => {
                let inputs = h * w;
                Ok(ModelParams::Mlp(MlpParams {
                    fc1: DenseLayer::init(*hidden_size, inputs, rng),
                    fc2: DenseLayer::init(2, *hidden_size, rng),
                }))
            }
        }
    }

    /// Class probabilities for one image.
    pub fn forward(&self, image: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match self {
            ModelParams::Lstm(clf) => lstm_classify_forward(image, clf),
            ModelParams::Cnn(p) => cnn_forward(image, p),
            ModelParams::Mlp(p) => p.forward(image),
        }
    }

    /// Mean cross-entropy and exact gradients over a batch.
    pub fn grad(&self, batch: &[(ArrayView2<'_, f64>, usize)]) -> Result<(f64, ModelParams)> {
        match self {
            ModelParams::Lstm(clf) => {
                let (loss, g) = lstm_grad(clf, batch)?;
                Ok((loss, ModelParams::Lstm(g)))
            }
            ModelParams::Cnn(p) => {
                let (loss, g) = cnn_grad(p, batch)?;
                Ok((loss, ModelParams::Cnn(Box::new(g))))
            }
            ModelParams::Mlp(p) => {
                let (loss, g) = p.grad(batch)?;
                Ok((loss, ModelParams::Mlp(g)))
            }
        }
    }

    /// Predicted class index (first maximum on ties).
    pub fn predict(&self, image: ArrayView2<'_, f64>) -> Result<usize> {
        let probs = self.forward(image)?;
        let mut best = 0;
        for i in 1..probs.len() {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Layer names and shapes in flat-vector order (checkpoint layout).
    pub fn layer_entries(&self) -> Vec<(String, Vec<usize>)> {
        let dense = |name: &str, layer: &DenseLayer| {
            vec![
                (format!("{}.weights", name), vec![layer.weights.dim().0, layer.weights.dim().1]),
                (format!("{}.bias", name), vec![layer.bias.len()]),
            ]
        };
        match self {
            ModelParams::Lstm(clf) => {
                let (r, c) = clf.cell.w_input.dim();
                let mut entries: Vec<(String, Vec<usize>)> = ["input", "forget", "output", "candidate"]
                    .iter()
                    .map(|gate| (format!("lstm.w_{}", gate), vec![r, c]))
                    .collect();
                entries.extend(
                    ["input", "forget", "output", "candidate"]
                        .iter()
                        .map(|gate| (format!("lstm.b_{}", gate), vec![r])),
                );
                entries.extend(dense("head", &clf.head));
                entries
            }
            ModelParams::Cnn(p) => {
                let kd = |k: &ConvKernelDims| vec![k.0, k.1, k.2, k.3];
                let k1 = p.conv1.kernel.dim();
                let k2 = p.conv2.kernel.dim();
                let mut entries = vec![
                    ("conv1.kernel".to_string(), kd(&k1)),
                    ("conv1.bias".to_string(), vec![p.conv1.bias.len()]),
                    ("conv2.kernel".to_string(), kd(&k2)),
                    ("conv2.bias".to_string(), vec![p.conv2.bias.len()]),
                ];
                entries.extend(dense("fc1", &p.fc1));
                entries.extend(dense("fc2", &p.fc2));
                entries.extend(dense("fc3", &p.fc3));
                entries
            }
            ModelParams::Mlp(p) => {
                let mut entries = dense("fc1", &p.fc1);
                entries.extend(dense("fc2", &p.fc2));
                entries
            }
        }
    }

    /// All parameters as one vector, in [`Self::layer_entries`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        self.visit_slices(|slice| flat.extend_from_slice(slice));
        flat
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_slices(|slice| n += slice.len());
        n
    }

    /// Overwrites every parameter from a flat vector (same order as
    /// [`Self::to_flat`]).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: format!("flat vector {} vs {} parameters", flat.len(), self.num_params()),
            });
        }
        let mut offset = 0;
        self.visit_slices_mut(|slice| {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        });
        Ok(())
    }

    fn visit_slices(&self, mut f: impl FnMut(&[f64])) {
        let dense = |layer: &DenseLayer, f: &mut dyn FnMut(&[f64])| {
            f(layer.weights.as_slice().expect("standard layout"));
            f(layer.bias.as_slice().expect("standard layout"));
        };
        match self {
            ModelParams::Lstm(clf) => {
                for w in [&clf.cell.w_input, &clf.cell.w_forget, &clf.cell.w_output, &clf.cell.w_candidate] {
                    f(w.as_slice().expect("standard layout"));
                }
                for b in [&clf.cell.b_input, &clf.cell.b_forget, &clf.cell.b_output, &clf.cell.b_candidate] {
                    f(b.as_slice().expect("standard layout"));
                }
                dense(&clf.head, &mut f);
            }
            ModelParams::Cnn(p) => {
                f(p.conv1.kernel.as_slice().expect("standard layout"));
                f(p.conv1.bias.as_slice().expect("standard layout"));
                f(p.conv2.kernel.as_slice().expect("standard layout"));
                f(p.conv2.bias.as_slice().expect("standard layout"));
                for d in [&p.fc1, &p.fc2, &p.fc3] {
                    dense(d, &mut f);
                }
            }
            ModelParams::Mlp(p) => {
                for d in [&p.fc1, &p.fc2] {
                    dense(d, &mut f);
                }
            }
        }
    }

    fn visit_slices_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        match self {
            ModelParams::Lstm(clf) => {
                for w in [
                    &mut clf.cell.w_input,
                    &mut clf.cell.w_forget,
                    &mut clf.cell.w_output,
                    &mut clf.cell.w_candidate,
                ] {
                    f(w.as_slice_mut().expect("standard layout"));
                }
                for b in [
                    &mut clf.cell.b_input,
                    &mut clf.cell.b_forget,
                    &mut clf.cell.b_output,
                    &mut clf.cell.b_candidate,
                ] {
                    f(b.as_slice_mut().expect("standard layout"));
                }
                f(clf.head.weights.as_slice_mut().expect("standard layout"));
                f(clf.head.bias.as_slice_mut().expect("standard layout"));
            }
            ModelParams::Cnn(p) => {
                f(p.conv1.kernel.as_slice_mut().expect("standard layout"));
                f(p.conv1.bias.as_slice_mut().expect("standard layout"));
                f(p.conv2.kernel.as_slice_mut().expect("standard layout"));
                f(p.conv2.bias.as_slice_mut().expect("standard layout"));
                for d in [&mut p.fc1, &mut p.fc2, &mut p.fc3] {
                    f(d.weights.as_slice_mut().expect("standard layout"));
                    f(d.bias.as_slice_mut().expect("standard layout"));
                }
            }
            ModelParams::Mlp(p) => {
                for d in [&mut p.fc1, &mut p.fc2] {
                    f(d.weights.as_slice_mut().expect("standard layout"));
                    f(d.bias.as_slice_mut().expect("standard layout"));
                }
            }
        }
    }
}

type ConvKernelDims = (usize, usize, usize, usize);

/// Forward-only mean cross-entropy over a batch.
pub fn batch_mean_loss(
    params: &ModelParams,
    batch: &[(ArrayView2<'_, f64>, usize)],
) -> Result<f64> {
    let mut total = 0.0;
    for (image, label) in batch {
        let probs = params.forward(*image)?;
        // Work back to the stable loss through the log of the probability.
        total -= probs[*label].ln();
    }
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy over a whole dataset in storage order.
pub fn dataset_mean_loss(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let batch: Vec<(ArrayView2<'_, f64>, usize)> =
        data.images.iter().map(|im| im.view()).zip(data.labels.iter().cloned()).collect();
    batch_mean_loss(params, &batch)
}

/// Fraction of the dataset classified correctly.
pub fn dataset_accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for (image, &label) in data.images.iter().zip(data.labels.iter()) {
        if params.predict(image.view())? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: LossCurve,
    pub train_accuracy: f64,
}

/// Trains a classifier from scratch on the dataset.
///
/// Fails with [`Error::NonFiniteLoss`] naming the iteration if the loss ever
/// leaves the finite range.
pub fn train_classifier(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate_for_training()?;
    let dims = data.image_dims()?;

    let mut rng = seeded_rng(cfg.rng_seed);
    let mut params = ModelParams::init(spec, dims, &mut rng)?;
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let adam_cfg = cfg.adam();
    let n = data.len();

    let initial = dataset_mean_loss(&params, data)?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut curve = LossCurve { iterations: vec![0], losses: vec![initial] };

    for step in 1..=cfg.iterations {
        let batch: Vec<(ArrayView2<'_, f64>, usize)> = (0..cfg.batch_size)
            .map(|_| {
                let i = rng.gen_range(0..n);
                (data.images[i].view(), data.labels[i])
            })
            .collect();
        let (loss, grads) = params.grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: step });
        }
        let grad_flat = grads.to_flat();
        adam_step(&mut flat, &grad_flat, &mut adam, &adam_cfg);
        params.assign_flat(&flat)?;

        if step % cfg.loss_record_stride == 0 || step == cfg.iterations {
            if *curve.iterations.last().expect("nonempty") != step {
                let recorded = dataset_mean_loss(&params, data)?;
                if !recorded.is_finite() {
                    return Err(Error::NonFiniteLoss { iteration: step });
                }
                curve.iterations.push(step);
                curve.losses.push(recorded);
            }
        }
    }

    let train_accuracy = dataset_accuracy(&params, data)?;
    Ok(TrainOutcome { params, curve, train_accuracy })
}
