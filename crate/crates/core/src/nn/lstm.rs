//! LSTM cell, sequence classifier head, and exact backpropagation through time.
//!
//! Gate preactivations act on the concatenation `[h_prev, x_t]`. The candidate
//! activation defaults to sigmoid (see [`CandidateActivation`]); the cell state
//! update is `s_t = f_t * s_prev + i_t * g_t` and the output is
//! `h_t = o_t * tanh(s_t)`.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{
    cross_entropy_from_logits, sigmoid, softmax, xavier_matrix, CandidateActivation, DenseLayer,
};
use crate::error::{Error, Result};

/// Gate weights over `[h_prev, x_t]` plus biases.
///
/// Every weight matrix is `(hidden, hidden + input)`; biases have length
/// `hidden`. The forget bias initializes to 1 so early training does not
/// flush the cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_input: Array2<f64>,
    pub w_forget: Array2<f64>,
    pub w_output: Array2<f64>,
    pub w_candidate: Array2<f64>,
    pub b_input: Array1<f64>,
    pub b_forget: Array1<f64>,
    pub b_output: Array1<f64>,
    pub b_candidate: Array1<f64>,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn init(hidden_size: usize, input_size: usize, rng: &mut impl Rng) -> LstmParams {
        let cols = hidden_size + input_size;
        let mut gate = || xavier_matrix(hidden_size, cols, cols, hidden_size, rng);
        let w_input = gate();
        let w_forget = gate();
        let w_output = gate();
        let w_candidate = gate();
        LstmParams {
            w_input,
            w_forget,
            w_output,
            w_candidate,
            b_input: Array1::zeros(hidden_size),
            b_forget: Array1::from_elem(hidden_size, 1.0),
            b_output: Array1::zeros(hidden_size),
            b_candidate: Array1::zeros(hidden_size),
            hidden_size,
        }
    }

    pub fn zeros(hidden_size: usize, input_size: usize) -> LstmParams {
        let cols = hidden_size + input_size;
        LstmParams {
            w_input: Array2::zeros((hidden_size, cols)),
            w_forget: Array2::zeros((hidden_size, cols)),
            w_output: Array2::zeros((hidden_size, cols)),
            w_candidate: Array2::zeros((hidden_size, cols)),
            b_input: Array1::zeros(hidden_size),
            b_forget: Array1::zeros(hidden_size),
            b_output: Array1::zeros(hidden_size),
            b_candidate: Array1::zeros(hidden_size),
            hidden_size,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_input.dim().1 - self.hidden_size
    }

    fn check_shapes(&self) -> Result<()> {
        let expect = (self.hidden_size, self.w_input.dim().1);
        for (name, w) in [
            ("input", &self.w_input),
            ("forget", &self.w_forget),
            ("output", &self.w_output),
            ("candidate", &self.w_candidate),
        ] {
            if w.dim() != expect {
                return Err(Error::DimensionMismatch {
                    context: format!("{} gate weights {:?}, expected {:?}", name, w.dim(), expect),
                });
            }
        }
        for (name, b) in [
            ("input", &self.b_input),
            ("forget", &self.b_forget),
            ("output", &self.b_output),
            ("candidate", &self.b_candidate),
        ] {
            if b.len() != self.hidden_size {
                return Err(Error::DimensionMismatch {
                    context: format!("{} gate bias length {}", name, b.len()),
                });
            }
        }
        Ok(())
    }
}

struct StepCache {
    joined: Array1<f64>,
    input_gate: Array1<f64>,
    forget_gate: Array1<f64>,
    output_gate: Array1<f64>,
    candidate: Array1<f64>,
    state: Array1<f64>,
    state_tanh: Array1<f64>,
}

fn cell_step(
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    s_prev: &Array1<f64>,
    p: &LstmParams,
    candidate: CandidateActivation,
) -> StepCache {
    let joined = concatenate![Axis(0), h_prev.view(), x.view()];
    let input_gate = (p.w_input.dot(&joined) + &p.b_input).mapv(sigmoid);
    let forget_gate = (p.w_forget.dot(&joined) + &p.b_forget).mapv(sigmoid);
    let output_gate = (p.w_output.dot(&joined) + &p.b_output).mapv(sigmoid);
    let cand = (p.w_candidate.dot(&joined) + &p.b_candidate).mapv(|v| candidate.apply(v));
    let state = &forget_gate * s_prev + &input_gate * &cand;
    let state_tanh = state.mapv(f64::tanh);
    StepCache {
        joined,
        input_gate,
        forget_gate,
        output_gate,
        candidate: cand,
        state,
        state_tanh,
    }
}

/// One LSTM step; returns `(h_t, s_t)`.
pub fn lstm_cell_forward(
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    s_prev: &Array1<f64>,
    p: &LstmParams,
    candidate: CandidateActivation,
) -> Result<(Array1<f64>, Array1<f64>)> {
    p.check_shapes()?;
    if x.len() != p.input_size() || h_prev.len() != p.hidden_size || s_prev.len() != p.hidden_size
    {
        return Err(Error::DimensionMismatch {
            context: format!(
                "x len {}, h len {}, s len {} vs input {} hidden {}",
                x.len(),
                h_prev.len(),
                s_prev.len(),
                p.input_size(),
                p.hidden_size
            ),
        });
    }
    let cache = cell_step(x, h_prev, s_prev, p, candidate);
    let h = &cache.output_gate * &cache.state_tanh;
    Ok((h, cache.state))
}

/// Sequence classifier: LSTM cell unrolled from zero state plus a dense
/// softmax head over the final hidden vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmClassifier {
    pub cell: LstmParams,
    pub head: DenseLayer,
    pub candidate: CandidateActivation,
}

impl LstmClassifier {
    pub fn init(
        hidden_size: usize,
        input_size: usize,
        classes: usize,
        candidate: CandidateActivation,
        rng: &mut impl Rng,
    ) -> LstmClassifier {
        let cell = LstmParams::init(hidden_size, input_size, rng);
        let head = DenseLayer::init(classes, hidden_size, rng);
        LstmClassifier { cell, head, candidate }
    }

    pub fn zeros_like(&self) -> LstmClassifier {
        LstmClassifier {
            cell: LstmParams::zeros(self.cell.hidden_size, self.cell.input_size()),
            head: self.head.zeros_like(),
            candidate: self.candidate,
        }
    }
}

fn unroll(
    sequence: ArrayView2<'_, f64>,
    clf: &LstmClassifier,
) -> Result<(Vec<StepCache>, Array1<f64>)> {
    clf.cell.check_shapes()?;
    let (steps, dim) = sequence.dim();
    if steps == 0 {
        return Err(Error::DimensionMismatch { context: "empty sequence".into() });
    }
    if dim != clf.cell.input_size() {
        return Err(Error::DimensionMismatch {
            context: format!("sequence dim {} vs input size {}", dim, clf.cell.input_size()),
        });
    }
    let hidden = clf.cell.hidden_size;
    let mut h = Array1::<f64>::zeros(hidden);
    let mut s = Array1::<f64>::zeros(hidden);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = sequence.row(t).to_owned();
        let cache = cell_step(&x, &h, &s, &clf.cell, clf.candidate);
        h = &cache.output_gate * &cache.state_tanh;
        s = cache.state.clone();
        caches.push(cache);
    }
    Ok((caches, h))
}

/// Class probabilities for a `T x D` sequence (rows are time steps).
pub fn lstm_classify_forward(
    sequence: ArrayView2<'_, f64>,
    clf: &LstmClassifier,
) -> Result<Array1<f64>> {
    let (_, h_final) = unroll(sequence, clf)?;
    Ok(softmax(&clf.head.forward(&h_final)))
}

/// Mean cross-entropy over a batch and exact gradients for every parameter.
///
/// Gradients come back in a classifier-shaped structure; the batch is a slice
/// of `(sequence, label)` pairs.
pub fn lstm_grad(
    clf: &LstmClassifier,
    batch: &[(ArrayView2<'_, f64>, usize)],
) -> Result<(f64, LstmClassifier)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig { detail: "empty batch".into() });
    }
    let hidden = clf.cell.hidden_size;
    let mut grads = clf.zeros_like();
    let mut total_loss = 0.0;

    for (sequence, label) in batch {
        let (caches, h_final) = unroll(*sequence, clf)?;
        let logits = clf.head.forward(&h_final);
        let (loss, probs) = cross_entropy_from_logits(&logits, *label);
        total_loss += loss;

        let mut d_logits = probs;
        d_logits[*label] -= 1.0;
        for (r, &dl) in d_logits.iter().enumerate() {
            grads.head.weights.row_mut(r).scaled_add(dl, &h_final);
        }
        grads.head.bias += &d_logits;

        let mut d_h = clf.head.weights.t().dot(&d_logits);
        let mut d_s = Array1::<f64>::zeros(hidden);
        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let d_output = &d_h * &cache.state_tanh;
            d_s = d_s + &d_h * &cache.output_gate * cache.state_tanh.mapv(|v| 1.0 - v * v);

            let d_input = &d_s * &cache.candidate;
            let d_candidate = &d_s * &cache.input_gate;
            let s_prev = if t == 0 {
                Array1::<f64>::zeros(hidden)
            } else {
                caches[t - 1].state.clone()
            };
            let d_forget = &d_s * &s_prev;
            let d_s_prev = &d_s * &cache.forget_gate;

            let pre_input = &d_input * &cache.input_gate.mapv(|v| v * (1.0 - v));
            let pre_forget = &d_forget * &cache.forget_gate.mapv(|v| v * (1.0 - v));
            let pre_output = &d_output * &cache.output_gate.mapv(|v| v * (1.0 - v));
            let pre_candidate = &d_candidate
                * &cache.candidate.mapv(|v| clf.candidate.derivative_from_value(v));

            for r in 0..hidden {
                grads.cell.w_input.row_mut(r).scaled_add(pre_input[r], &cache.joined);
                grads.cell.w_forget.row_mut(r).scaled_add(pre_forget[r], &cache.joined);
                grads.cell.w_output.row_mut(r).scaled_add(pre_output[r], &cache.joined);
                grads.cell.w_candidate.row_mut(r).scaled_add(pre_candidate[r], &cache.joined);
            }
            grads.cell.b_input += &pre_input;
            grads.cell.b_forget += &pre_forget;
            grads.cell.b_output += &pre_output;
            grads.cell.b_candidate += &pre_candidate;

            let mut d_joined = clf.cell.w_input.t().dot(&pre_input);
            d_joined += &clf.cell.w_forget.t().dot(&pre_forget);
            d_joined += &clf.cell.w_output.t().dot(&pre_output);
            d_joined += &clf.cell.w_candidate.t().dot(&pre_candidate);

            d_h = d_joined.slice(ndarray::s![..hidden]).to_owned();
            d_s = d_s_prev;
        }
    }

    let scale = 1.0 / batch.len() as f64;
    scale_classifier(&mut grads, scale);
    Ok((total_loss * scale, grads))
}

fn scale_classifier(clf: &mut LstmClassifier, scale: f64) {
    for w in [
        &mut clf.cell.w_input,
        &mut clf.cell.w_forget,
        &mut clf.cell.w_output,
        &mut clf.cell.w_candidate,
    ] {
        w.mapv_inplace(|v| v * scale);
    }
    for b in [
        &mut clf.cell.b_input,
        &mut clf.cell.b_forget,
        &mut clf.cell.b_output,
        &mut clf.cell.b_candidate,
    ] {
        b.mapv_inplace(|v| v * scale);
    }
    clf.head.weights.mapv_inplace(|v| v * scale);
    clf.head.bias.mapv_inplace(|v| v * scale);
}
