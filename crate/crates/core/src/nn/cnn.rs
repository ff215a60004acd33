//! Convolutional classifier: two conv/ReLU/maxpool stages and three dense
//! layers ending in softmax, with exact analytic gradients.
//!
//! Feature maps are `[row][col][channel]`; kernels are
//! `[krow][kcol][in_channel][out_channel]`. Convolution is valid
//! cross-correlation with stride 1 followed by bias and ReLU.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2};
use rand::Rng;

use super::{cross_entropy_from_logits, dense_backward, relu, softmax, DenseLayer};
use crate::error::{Error, Result};

/// Convolution kernel tensor plus per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn init(k: usize, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> ConvLayer {
        let fan_in = k * k * in_channels;
        let fan_out = k * k * out_channels;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> =
            (0..k * k * in_channels * out_channels).map(|_| rng.gen_range(-bound..bound)).collect();
        ConvLayer {
            kernel: Array4::from_shape_vec((k, k, in_channels, out_channels), data)
                .expect("kernel shape"),
            bias: Array1::zeros(out_channels),
        }
    }

    pub fn zeros_like(&self) -> ConvLayer {
        ConvLayer { kernel: Array4::zeros(self.kernel.dim()), bias: Array1::zeros(self.bias.len()) }
    }
}

/// Layer sizing for the two-stage classifier. The published topology fixes the
/// stage count; the sizes here are desk-scale defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CnnArch {
    pub conv1_kernel: usize,
    pub conv1_channels: usize,
    pub conv2_kernel: usize,
    pub conv2_channels: usize,
    pub fc1_units: usize,
    pub fc2_units: usize,
}

impl Default for CnnArch {
    fn default() -> Self {
        CnnArch {
            conv1_kernel: 5,
            conv1_channels: 8,
            conv2_kernel: 5,
            conv2_channels: 16,
            fc1_units: 128,
            fc2_units: 64,
        }
    }
}

impl CnnArch {
    /// Feature-map dimensions after each stage for a square input, or an
    /// error when a kernel no longer fits.
    pub fn stage_dims(&self, input_size: usize) -> Result<StageDims> {
        let conv = |size: usize, k: usize| -> Result<usize> {
            if k == 0 || k > size {
                return Err(Error::DimensionMismatch {
                    context: format!("kernel {} larger than input {}", k, size),
                });
            }
            Ok(size - k + 1)
        };
        let c1 = conv(input_size, self.conv1_kernel)?;
        let p1 = c1 / 2;
        if p1 == 0 {
            return Err(Error::DimensionMismatch {
                context: format!("feature map collapses after first pooling ({}x{})", c1, c1),
            });
        }
        let c2 = conv(p1, self.conv2_kernel)?;
        let p2 = c2 / 2;
        if p2 == 0 {
            return Err(Error::DimensionMismatch {
                context: format!("feature map collapses after second pooling ({}x{})", c2, c2),
            });
        }
        Ok(StageDims { conv1: c1, pool1: p1, conv2: c2, pool2: p2, flat: p2 * p2 * self.conv2_channels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageDims {
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
    pub flat: usize,
}

/// Full parameter set for the two-stage convolutional classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub arch: CnnArch,
    pub input_size: usize,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
    pub fc3: DenseLayer,
}

impl CnnParams {
    pub fn init(arch: CnnArch, input_size: usize, rng: &mut impl Rng) -> Result<CnnParams> {
        let dims = arch.stage_dims(input_size)?;
        Ok(CnnParams {
            arch,
            input_size,
            conv1: ConvLayer::init(arch.conv1_kernel, 1, arch.conv1_channels, rng),
            conv2: ConvLayer::init(arch.conv2_kernel, arch.conv1_channels, arch.conv2_channels, rng),
            fc1: DenseLayer::init(arch.fc1_units, dims.flat, rng),
            fc2: DenseLayer::init(arch.fc2_units, arch.fc1_units, rng),
            fc3: DenseLayer::init(2, arch.fc2_units, rng),
        })
    }

    pub fn zeros_like(&self) -> CnnParams {
        CnnParams {
            arch: self.arch,
            input_size: self.input_size,
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
            fc3: self.fc3.zeros_like(),
        }
    }
}

/// Valid cross-correlation (stride 1, no padding) plus bias and ReLU.
pub fn conv2d_forward(
    input: &Array3<f64>,
    kernel: &Array4<f64>,
    bias: &Array1<f64>,
) -> Result<Array3<f64>> {
    let (pre, _) = conv2d_raw(input, kernel, bias)?;
    Ok(pre.mapv(relu))
}

/// Returns `(preactivation, output_dims)`; ReLU is applied by the caller.
fn conv2d_raw(
    input: &Array3<f64>,
    kernel: &Array4<f64>,
    bias: &Array1<f64>,
) -> Result<(Array3<f64>, (usize, usize, usize))> {
    let (h, w, c_in) = input.dim();
    let (k_h, k_w, kc_in, c_out) = kernel.dim();
    if kc_in != c_in {
        return Err(Error::DimensionMismatch {
            context: format!("kernel expects {} input channels, image has {}", kc_in, c_in),
        });
    }
    if bias.len() != c_out {
        return Err(Error::DimensionMismatch {
            context: format!("bias length {} vs {} output channels", bias.len(), c_out),
        });
    }
    if k_h > h || k_w > w {
        return Err(Error::DimensionMismatch {
            context: format!("kernel {}x{} larger than input {}x{}", k_h, k_w, h, w),
        });
    }
    let (oh, ow) = (h - k_h + 1, w - k_w + 1);
    let mut out = Array3::<f64>::zeros((oh, ow, c_out));

    let input_flat = input.as_slice().expect("standard layout");
    let kernel_flat = kernel.as_slice().expect("standard layout");
    let out_flat = out.as_slice_mut().expect("standard layout");
    let mut acc = vec![0.0f64; c_out];
    for i in 0..oh {
        for j in 0..ow {
            for (co, slot) in acc.iter_mut().enumerate() {
                *slot = bias[co];
            }
            for di in 0..k_h {
                let row = (i + di) * w;
                for dj in 0..k_w {
                    let in_base = (row + j + dj) * c_in;
                    let k_base = (di * k_w + dj) * c_in * c_out;
                    for ci in 0..c_in {
                        let v = input_flat[in_base + ci];
                        let k_off = k_base + ci * c_out;
                        for (co, slot) in acc.iter_mut().enumerate() {
                            *slot += v * kernel_flat[k_off + co];
                        }
                    }
                }
            }
            let out_base = (i * ow + j) * c_out;
            out_flat[out_base..out_base + c_out].copy_from_slice(&acc);
        }
    }
    Ok((out, (oh, ow, c_out)))
}

/// Non-overlapping 2x2 maximum pooling; a trailing odd row or column is dropped.
pub fn maxpool2(input: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f64>::zeros((oh, ow, c));
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let m = input[[2 * i, 2 * j, ch]]
                    .max(input[[2 * i, 2 * j + 1, ch]])
                    .max(input[[2 * i + 1, 2 * j, ch]])
                    .max(input[[2 * i + 1, 2 * j + 1, ch]]);
                out[[i, j, ch]] = m;
            }
        }
    }
    out
}

/// Maxpool that also records, per output cell, the linear `(row*W + col)`
/// index of the first maximum in window scan order (for gradient routing).
fn maxpool2_with_argmax(input: &Array3<f64>) -> (Array3<f64>, Vec<usize>) {
    let (h, w, c) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f64>::zeros((oh, ow, c));
    let mut argmax = vec![0usize; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for di in 0..2 {
                    for dj in 0..2 {
                        let (r, col) = (2 * i + di, 2 * j + dj);
                        let v = input[[r, col, ch]];
                        if v > best {
                            best = v;
                            best_idx = r * w + col;
                        }
                    }
                }
                out[[i, j, ch]] = best;
                argmax[(i * ow + j) * c + ch] = best_idx;
            }
        }
    }
    (out, argmax)
}

struct CnnCache {
    input: Array3<f64>,
    conv1_pre: Array3<f64>,
    pool1_out: Array3<f64>,
    pool1_argmax: Vec<usize>,
    conv2_pre: Array3<f64>,
    pool2_out: Array3<f64>,
    pool2_argmax: Vec<usize>,
    flat: Array1<f64>,
    fc1_pre: Array1<f64>,
    fc1_out: Array1<f64>,
    fc2_pre: Array1<f64>,
    fc2_out: Array1<f64>,
}

fn flatten(features: &Array3<f64>) -> Array1<f64> {
    Array1::from_iter(features.iter().cloned())
}

fn forward_cached(image: ArrayView2<'_, f64>, p: &CnnParams) -> Result<(CnnCache, Array1<f64>)> {
    let (h, w) = image.dim();
    if h != p.input_size || w != p.input_size {
        return Err(Error::DimensionMismatch {
            context: format!("image {}x{} vs configured input {}", h, w, p.input_size),
        });
    }
    let input =
        Array3::from_shape_fn((h, w, 1), |(r, c, _)| image[[r, c]]);
    let (conv1_pre, _) = conv2d_raw(&input, &p.conv1.kernel, &p.conv1.bias)?;
    let conv1_out = conv1_pre.mapv(relu);
    let (pool1_out, pool1_argmax) = maxpool2_with_argmax(&conv1_out);
    let (conv2_pre, _) = conv2d_raw(&pool1_out, &p.conv2.kernel, &p.conv2.bias)?;
    let conv2_out = conv2_pre.mapv(relu);
    let (pool2_out, pool2_argmax) = maxpool2_with_argmax(&conv2_out);
    let flat = flatten(&pool2_out);
    if flat.len() != p.fc1.weights.dim().1 {
        return Err(Error::DimensionMismatch {
            context: format!("flattened {} vs fc1 inputs {}", flat.len(), p.fc1.weights.dim().1),
        });
    }
    let fc1_pre = p.fc1.forward(&flat);
    let fc1_out = fc1_pre.mapv(relu);
    let fc2_pre = p.fc2.forward(&fc1_out);
    let fc2_out = fc2_pre.mapv(relu);
    let logits = p.fc3.forward(&fc2_out);
    let cache = CnnCache {
        input,
        conv1_pre,
        pool1_out,
        pool1_argmax,
        conv2_pre,
        pool2_out,
        pool2_argmax,
        flat,
        fc1_pre,
        fc1_out,
        fc2_pre,
        fc2_out,
    };
    Ok((cache, logits))
}

/// Class probabilities for one single-channel square image.
pub fn cnn_forward(image: ArrayView2<'_, f64>, p: &CnnParams) -> Result<Array1<f64>> {
    let (_, logits) = forward_cached(image, p)?;
    Ok(softmax(&logits))
}

/// Gradient of conv kernel/bias and (optionally) the input, given the
/// gradient at the preactivation.
fn conv2d_backward(
    input: &Array3<f64>,
    kernel: &Array4<f64>,
    d_pre: &Array3<f64>,
    d_kernel: &mut Array4<f64>,
    d_bias: &mut Array1<f64>,
    mut d_input: Option<&mut Array3<f64>>,
) {
    let (_, w, c_in) = input.dim();
    let (k_h, k_w, _, c_out) = kernel.dim();
    let (oh, ow, _) = d_pre.dim();

    let input_flat = input.as_slice().expect("standard layout");
    let kernel_flat = kernel.as_slice().expect("standard layout");
    let d_pre_flat = d_pre.as_slice().expect("standard layout");
    let d_kernel_flat = d_kernel.as_slice_mut().expect("standard layout");
    for i in 0..oh {
        for j in 0..ow {
            let g_base = (i * ow + j) * c_out;
            let g = &d_pre_flat[g_base..g_base + c_out];
            for (co, gv) in g.iter().enumerate() {
                d_bias[co] += gv;
            }
            for di in 0..k_h {
                let row = (i + di) * w;
                for dj in 0..k_w {
                    let in_base = (row + j + dj) * c_in;
                    let k_base = (di * k_w + dj) * c_in * c_out;
                    for ci in 0..c_in {
                        let v = input_flat[in_base + ci];
                        let k_off = k_base + ci * c_out;
                        for (co, gv) in g.iter().enumerate() {
                            d_kernel_flat[k_off + co] += v * gv;
                        }
                        if let Some(d_in) = d_input.as_deref_mut() {
                            let d_in_flat = d_in.as_slice_mut().expect("standard layout");
                            let mut acc = 0.0;
                            for (co, gv) in g.iter().enumerate() {
                                acc += kernel_flat[k_off + co] * gv;
                            }
                            d_in_flat[in_base + ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Routes pooled gradients back to the argmax cells.
fn maxpool2_backward(
    d_out: &Array3<f64>,
    argmax: &[usize],
    input_dims: (usize, usize, usize),
) -> Array3<f64> {
    let (h, w, c) = input_dims;
    let (oh, ow, _) = d_out.dim();
    let mut d_in = Array3::<f64>::zeros((h, w, c));
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let linear = argmax[(i * ow + j) * c + ch];
                let (r, col) = (linear / w, linear % w);
                d_in[[r, col, ch]] += d_out[[i, j, ch]];
            }
        }
    }
    d_in
}

/// Mean cross-entropy over a batch of `(image, label)` pairs and exact
/// gradients for every parameter, in a params-shaped structure.
pub fn cnn_grad(
    p: &CnnParams,
    batch: &[(ArrayView2<'_, f64>, usize)],
) -> Result<(f64, CnnParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig { detail: "empty batch".into() });
    }
    let mut grads = p.zeros_like();
    let mut total_loss = 0.0;

    for (image, label) in batch {
        let (cache, logits) = forward_cached(*image, p)?;
        let (loss, probs) = cross_entropy_from_logits(&logits, *label);
        total_loss += loss;

        let mut d_logits = probs;
        d_logits[*label] -= 1.0;

        let d_fc2_out = dense_backward(&p.fc3, &cache.fc2_out, &d_logits, &mut grads.fc3);
        let d_fc2_pre = &d_fc2_out
            * &cache.fc2_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let d_fc1_out = dense_backward(&p.fc2, &cache.fc1_out, &d_fc2_pre, &mut grads.fc2);
        let d_fc1_pre = &d_fc1_out
            * &cache.fc1_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let d_flat = dense_backward(&p.fc1, &cache.flat, &d_fc1_pre, &mut grads.fc1);

        let d_pool2 = Array3::from_shape_vec(cache.pool2_out.dim(), d_flat.to_vec())
            .expect("flatten order matches");
        let conv2_dims = cache.conv2_pre.dim();
        let d_conv2_out = maxpool2_backward(&d_pool2, &cache.pool2_argmax, conv2_dims);
        let mut d_conv2_pre = d_conv2_out;
        d_conv2_pre.zip_mut_with(&cache.conv2_pre, |g, &pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });

        let mut d_pool1 = Array3::<f64>::zeros(cache.pool1_out.dim());
        conv2d_backward(
            &cache.pool1_out,
            &p.conv2.kernel,
            &d_conv2_pre,
            &mut grads.conv2.kernel,
            &mut grads.conv2.bias,
            Some(&mut d_pool1),
        );

        let conv1_dims = cache.conv1_pre.dim();
        let d_conv1_out = maxpool2_backward(&d_pool1, &cache.pool1_argmax, conv1_dims);
        let mut d_conv1_pre = d_conv1_out;
        d_conv1_pre.zip_mut_with(&cache.conv1_pre, |g, &pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });
        conv2d_backward(
            &cache.input,
            &p.conv1.kernel,
            &d_conv1_pre,
            &mut grads.conv1.kernel,
            &mut grads.conv1.bias,
            None,
        );
    }

    let scale = 1.0 / batch.len() as f64;
    for w in [&mut grads.conv1.kernel, &mut grads.conv2.kernel] {
        w.mapv_inplace(|v| v * scale);
    }
    for b in [&mut grads.conv1.bias, &mut grads.conv2.bias] {
        b.mapv_inplace(|v| v * scale);
    }
    for d in [&mut grads.fc1, &mut grads.fc2, &mut grads.fc3] {
        d.weights.mapv_inplace(|v| v * scale);
        d.bias.mapv_inplace(|v| v * scale);
    }
    Ok((total_loss * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identity_kernel_is_relu() {
        let mut rng = crate::rng::seeded_rng(1);
        let input = Array3::from_shape_fn((4, 5, 1), |_| rng.gen_range(-1.0..1.0));
        let kernel = Array4::from_elem((1, 1, 1, 1), 1.0);
        let bias = Array1::zeros(1);
        let out = conv2d_forward(&input, &kernel, &bias).unwrap();
        for (o, i) in out.iter().zip(input.iter()) {
            assert_eq!(*o, i.max(0.0));
        }
    }

    #[test]
    fn all_ones_kernel_hand_convolution() {
        let input = Array3::from_elem((3, 3, 1), 1.0);
        let kernel = Array4::from_elem((2, 2, 1, 1), 1.0);
        let bias = Array1::zeros(1);
        let out = conv2d_forward(&input, &kernel, &bias).unwrap();
        assert_eq!(out.dim(), (2, 2, 1));
        assert!(out.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let input = Array3::from_elem((3, 3, 1), 1.0);
        let kernel = Array4::from_elem((4, 4, 1, 1), 1.0);
        let bias = Array1::zeros(1);
        assert!(matches!(
            conv2d_forward(&input, &kernel, &bias),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    /// Quadruple-loop convolution oracle.
    fn naive_conv(
        input: &Array3<f64>,
        kernel: &Array4<f64>,
        bias: &Array1<f64>,
    ) -> Array3<f64> {
        let (h, w, c_in) = input.dim();
        let (kh, kw, _, c_out) = kernel.dim();
        let mut out = Array3::<f64>::zeros((h - kh + 1, w - kw + 1, c_out));
        for i in 0..h - kh + 1 {
            for j in 0..w - kw + 1 {
                for co in 0..c_out {
                    let mut acc = bias[co];
                    for di in 0..kh {
                        for dj in 0..kw {
                            for ci in 0..c_in {
                                acc += input[[i + di, j + dj, ci]] * kernel[[di, dj, ci, co]];
                            }
                        }
                    }
                    out[[i, j, co]] = acc.max(0.0);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = crate::rng::seeded_rng(14);
        for _ in 0..30 {
            let (h, w) = (rng.gen_range(3..8), rng.gen_range(3..8));
            let c_in = rng.gen_range(1..4);
            let c_out = rng.gen_range(1..4);
            let k = rng.gen_range(1..=3.min(h).min(w));
            let input = Array3::from_shape_fn((h, w, c_in), |_| rng.gen_range(-1.0..1.0));
            let kernel =
                Array4::from_shape_fn((k, k, c_in, c_out), |_| rng.gen_range(-1.0..1.0));
            let bias = Array1::from_shape_fn(c_out, |_| rng.gen_range(-0.5..0.5));
            let fast = conv2d_forward(&input, &kernel, &bias).unwrap();
            let slow = naive_conv(&input, &kernel, &bias);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let constant = Array3::from_elem((4, 6, 2), 0.3);
        let pooled = maxpool2(&constant);
        assert_eq!(pooled.dim(), (2, 3, 2));
        assert!(pooled.iter().all(|&v| v == 0.3));

        let mut window = Array3::<f64>::zeros((2, 2, 1));
        window[[0, 0, 0]] = 1.0;
        window[[0, 1, 0]] = 2.0;
        window[[1, 0, 0]] = 3.0;
        window[[1, 1, 0]] = 4.0;
        assert_eq!(maxpool2(&window)[[0, 0, 0]], 4.0);

        // Odd trailing row/column is dropped.
        let odd = Array3::from_elem((5, 3, 1), 1.0);
        assert_eq!(maxpool2(&odd).dim(), (2, 1, 1));
    }

    #[test]
    fn maxpool_matches_naive_oracle() {
        let mut rng = crate::rng::seeded_rng(15);
        for _ in 0..30 {
            let (h, w, c) = (rng.gen_range(2..9), rng.gen_range(2..9), rng.gen_range(1..4));
            let input = Array3::from_shape_fn((h, w, c), |_| rng.gen_range(-1.0..1.0));
            let out = maxpool2(&input);
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    for ch in 0..c {
                        let mut m = f64::NEG_INFINITY;
                        for di in 0..2 {
                            for dj in 0..2 {
                                m = m.max(input[[2 * i + di, 2 * j + dj, ch]]);
                            }
                        }
                        assert_eq!(out[[i, j, ch]], m);
                    }
                }
            }
        }
    }

    fn small_arch() -> CnnArch {
        CnnArch {
            conv1_kernel: 3,
            conv1_channels: 4,
            conv2_kernel: 3,
            conv2_channels: 6,
            fc1_units: 10,
            fc2_units: 8,
        }
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut rng = crate::rng::seeded_rng(16);
        let mut p = CnnParams::init(small_arch(), 12, &mut rng).unwrap();
        p.fc3.weights.fill(0.0);
        p.fc3.bias.fill(0.0);
        let image = Array2::from_shape_fn((12, 12), |_| rng.gen_range(0.0..1.0));
        let probs = cnn_forward(image.view(), &p).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn probabilities_are_normalized_for_random_params() {
        let mut rng = crate::rng::seeded_rng(18);
        for _ in 0..10 {
            let p = CnnParams::init(small_arch(), 12, &mut rng).unwrap();
            let image = Array2::from_shape_fn((12, 12), |_| rng.gen_range(0.0..1.0));
            let probs = cnn_forward(image.view(), &p).unwrap();
            assert!((probs.sum() - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    // The composed forward equals applying the public layer ops in sequence.
    #[test]
    fn forward_composition_matches_layer_by_layer() {
        let mut rng = crate::rng::seeded_rng(19);
        let p = CnnParams::init(small_arch(), 12, &mut rng).unwrap();
        let image = Array2::from_shape_fn((12, 12), |_| rng.gen_range(0.0..1.0));
        let probs = cnn_forward(image.view(), &p).unwrap();

        let input = Array3::from_shape_fn((12, 12, 1), |(r, c, _)| image[[r, c]]);
        let a = maxpool2(&conv2d_forward(&input, &p.conv1.kernel, &p.conv1.bias).unwrap());
        let b = maxpool2(&conv2d_forward(&a, &p.conv2.kernel, &p.conv2.bias).unwrap());
        let flat = Array1::from_iter(b.iter().cloned());
        let z1 = p.fc1.forward(&flat).mapv(relu);
        let z2 = p.fc2.forward(&z1).mapv(relu);
        let expected = softmax(&p.fc3.forward(&z2));
        for (x, y) in probs.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_image_size_is_an_error() {
        let mut rng = crate::rng::seeded_rng(20);
        let p = CnnParams::init(small_arch(), 12, &mut rng).unwrap();
        let image = Array2::<f64>::zeros((10, 10));
        assert!(cnn_forward(image.view(), &p).is_err());
    }

    #[test]
    fn duplicated_batch_has_the_same_gradient() {
        let mut rng = crate::rng::seeded_rng(22);
        let p = CnnParams::init(small_arch(), 12, &mut rng).unwrap();
        let image = Array2::from_shape_fn((12, 12), |_| rng.gen_range(0.0..1.0));
        let (l1, g1) = cnn_grad(&p, &[(image.view(), 0)]).unwrap();
        let (l2, g2) = cnn_grad(&p, &[(image.view(), 0), (image.view(), 0)]).unwrap();
        assert!((l1 - l2).abs() < 1e-13);
        for (a, b) in g1.conv1.kernel.iter().zip(g2.conv1.kernel.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in g1.fc1.weights.iter().zip(g2.fc1.weights.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn confident_correct_batch_has_near_zero_gradients() {
        let mut rng = crate::rng::seeded_rng(24);
        let mut p = CnnParams::init(small_arch(), 12, &mut rng).unwrap();
        // Pin the logits far apart in favour of class 0 for every input.
        p.fc3.weights.fill(0.0);
        p.fc3.bias[0] = 40.0;
        p.fc3.bias[1] = -40.0;
        let image = Array2::from_shape_fn((12, 12), |_| rng.gen_range(0.0..1.0));
        let (loss, grads) = cnn_grad(&p, &[(image.view(), 0)]).unwrap();
        assert!(loss < 1e-12);
        let max_grad = grads
            .fc2
            .weights
            .iter()
            .chain(grads.conv1.kernel.iter())
            .fold(0.0f64, |m, &g| m.max(g.abs()));
        assert!(max_grad < 1e-12, "max grad {}", max_grad);
    }
}
