//! Layer shape algebra, initialization, and forward/backward passes.
//!
//! All loops run in a fixed sequential order so results are bit-reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        units: usize,
    },
}

/// Parameters of one layer; parameter-free layers hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Conv { weights: Tensor, bias: Tensor },
    Dense { weights: Tensor, bias: Tensor },
    None,
}

impl LayerWeights {
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            LayerWeights::Conv { weights, bias } | LayerWeights::Dense { weights, bias } => {
                vec![weights, bias]
            }
            LayerWeights::None => vec![],
        }
    }
}

/// Shape of the layer output for a given input shape, or why the chaining
/// is invalid.
pub fn output_shape(spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>, ModelError> {
    match spec {
        LayerSpec::Conv {
            kernel,
            out_channels,
            stride,
        } => {
            let [h, w, _c] = dims3(input, "conv")?;
            if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                return Err(ModelError::InvalidArch(
                    "conv kernel, stride and out_channels must be positive".into(),
                ));
            }
            if h < *kernel || w < *kernel {
                return Err(ModelError::InvalidArch(format!(
                    "conv kernel {kernel} larger than input {h}x{w}"
                )));
            }
            Ok(vec![
                (h - kernel) / stride + 1,
                (w - kernel) / stride + 1,
                *out_channels,
            ])
        }
        LayerSpec::Relu => Ok(input.to_vec()),
        LayerSpec::MaxPool2 => {
            let [h, w, c] = dims3(input, "maxpool")?;
            if h < 2 || w < 2 {
                return Err(ModelError::InvalidArch(format!(
                    "maxpool needs at least 2x2 input, got {h}x{w}"
                )));
            }
            Ok(vec![h / 2, w / 2, c])
        }
        LayerSpec::Flatten => {
            let [h, w, c] = dims3(input, "flatten")?;
            Ok(vec![h * w * c])
        }
        LayerSpec::Dense { units } => {
            if input.len() != 1 {
                return Err(ModelError::InvalidArch(format!(
                    "dense expects a flat input, got shape {input:?}"
                )));
            }
            if *units == 0 {
                return Err(ModelError::InvalidArch("dense units must be positive".into()));
            }
            Ok(vec![*units])
        }
    }
}

fn dims3(shape: &[usize], what: &str) -> Result<[usize; 3], ModelError> {
    match shape {
        [h, w, c] => Ok([*h, *w, *c]),
        _ => Err(ModelError::InvalidArch(format!(
            "{what} expects an HxWxC input, got shape {shape:?}"
        ))),
    }
}

/// He-style fan-in scaled uniform init for parametric layers, zero biases.
pub fn init_weights(spec: &LayerSpec, input: &[usize], rng: &mut ChaCha8Rng) -> LayerWeights {
    match spec {
        LayerSpec::Conv {
            kernel,
            out_channels,
            stride: _,
        } => {
            let in_c = input[2];
            let fan_in = kernel * kernel * in_c;
            let limit = (6.0 / fan_in as f32).sqrt();
            let count = out_channels * kernel * kernel * in_c;
            let data = (0..count).map(|_| rng.gen_range(-limit..limit)).collect();
            LayerWeights::Conv {
                weights: Tensor::from_vec(vec![*out_channels, *kernel, *kernel, in_c], data)
                    .expect("init data matches shape"),
                bias: Tensor::zeros(&[*out_channels]),
            }
        }
        LayerSpec::Dense { units } => {
            let fan_in = input[0];
            let limit = (6.0 / fan_in as f32).sqrt();
            let data = (0..fan_in * units)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            LayerWeights::Dense {
                weights: Tensor::from_vec(vec![fan_in, *units], data)
                    .expect("init data matches shape"),
                bias: Tensor::zeros(&[*units]),
            }
        }
        _ => LayerWeights::None,
    }
}

/// Zero-filled gradient buffer with the same shapes as `weights`.
pub fn zeros_like(weights: &LayerWeights) -> LayerWeights {
    match weights {
        LayerWeights::Conv { weights, bias } => LayerWeights::Conv {
            weights: Tensor::zeros(weights.shape()),
            bias: Tensor::zeros(bias.shape()),
        },
        LayerWeights::Dense { weights, bias } => LayerWeights::Dense {
            weights: Tensor::zeros(weights.shape()),
            bias: Tensor::zeros(bias.shape()),
        },
        LayerWeights::None => LayerWeights::None,
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn forward(spec: &LayerSpec, weights: &LayerWeights, input: &Tensor) -> Tensor {
    match (spec, weights) {
        (
            LayerSpec::Conv { kernel, stride, .. },
            LayerWeights::Conv { weights, bias },
        ) => conv_forward(input, weights, bias, *kernel, *stride),
        (LayerSpec::Relu, _) => {
            let mut out = input.clone();
            for v in out.data_mut() {
                *v = v.max(0.0);
            }
            out
        }
        (LayerSpec::MaxPool2, _) => maxpool_forward(input),
        (LayerSpec::Flatten, _) => {
            let len = input.len();
            input.clone().reshaped(vec![len])
        }
        (LayerSpec::Dense { .. }, LayerWeights::Dense { weights, bias }) => {
            dense_forward(input, weights, bias)
        }
        _ => unreachable!("layer spec and weights are constructed together"),
    }
}

/// Backward pass through one layer: returns the gradient with respect to the
/// layer input and, when `grads` is provided, accumulates parameter
/// gradients into it.
pub fn backward(
    spec: &LayerSpec,
    weights: &LayerWeights,
    input: &Tensor,
    out_grad: &Tensor,
    grads: Option<&mut LayerWeights>,
) -> Tensor {
    match (spec, weights) {
        (
            LayerSpec::Conv { kernel, stride, .. },
            LayerWeights::Conv { weights, .. },
        ) => conv_backward(input, weights, out_grad, *kernel, *stride, grads),
        (LayerSpec::Relu, _) => {
            let mut grad = out_grad.clone();
            for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
            grad
        }
        (LayerSpec::MaxPool2, _) => maxpool_backward(input, out_grad),
        (LayerSpec::Flatten, _) => out_grad.clone().reshaped(input.shape().to_vec()),
        (LayerSpec::Dense { .. }, LayerWeights::Dense { weights, .. }) => {
            dense_backward(input, weights, out_grad, grads)
        }
        _ => unreachable!("layer spec and weights are constructed together"),
    }
}

fn conv_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, k: usize, s: usize) -> Tensor {
    let [h, w, c] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let oc_n = weights.shape()[0];
    let oh_n = (h - k) / s + 1;
    let ow_n = (w - k) / s + 1;
    let x = input.data();
    let wt = weights.data();
    let b = bias.data();
    let row_len = k * c;

    let mut out = Tensor::zeros(&[oh_n, ow_n, oc_n]);
    let out_data = out.data_mut();
    for oy in 0..oh_n {
        for ox in 0..ow_n {
            let iy0 = oy * s;
            let ix0 = ox * s;
            let out_base = (oy * ow_n + ox) * oc_n;
            for oc in 0..oc_n {
                let w_base = oc * k * row_len;
                let mut acc = b[oc];
                for kh in 0..k {
                    let x_off = ((iy0 + kh) * w + ix0) * c;
                    acc += dot(
                        &x[x_off..x_off + row_len],
                        &wt[w_base + kh * row_len..w_base + (kh + 1) * row_len],
                    );
                }
                out_data[out_base + oc] = acc;
            }
        }
    }
    out
}

fn conv_backward(
    input: &Tensor,
    weights: &Tensor,
    out_grad: &Tensor,
    k: usize,
    s: usize,
    grads: Option<&mut LayerWeights>,
) -> Tensor {
    let [h, w, c] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let oc_n = weights.shape()[0];
    let oh_n = (h - k) / s + 1;
    let ow_n = (w - k) / s + 1;
    let x = input.data();
    let wt = weights.data();
    let dy = out_grad.data();
    let row_len = k * c;

    let mut in_grad = Tensor::zeros(&[h, w, c]);
    let dx = in_grad.data_mut();

    let (mut w_grad, mut b_grad) = match grads {
        Some(LayerWeights::Conv { weights, bias }) => {
            (Some(weights.data_mut()), Some(bias.data_mut()))
        }
        Some(_) => unreachable!("gradient buffer shape follows the layer"),
        None => (None, None),
    };

    for oy in 0..oh_n {
        for ox in 0..ow_n {
            let iy0 = oy * s;
            let ix0 = ox * s;
            let out_base = (oy * ow_n + ox) * oc_n;
            for oc in 0..oc_n {
                let g = dy[out_base + oc];
                if g == 0.0 {
                    continue;
                }
                let w_base = oc * k * row_len;
                for kh in 0..k {
                    let x_off = ((iy0 + kh) * w + ix0) * c;
                    let w_off = w_base + kh * row_len;
                    let dx_run = &mut dx[x_off..x_off + row_len];
                    let w_run = &wt[w_off..w_off + row_len];
                    for (d, &wv) in dx_run.iter_mut().zip(w_run) {
                        *d += g * wv;
                    }
                    if let Some(wg) = w_grad.as_deref_mut() {
                        let x_run = &x[x_off..x_off + row_len];
                        let wg_run = &mut wg[w_off..w_off + row_len];
                        for (dw, &xv) in wg_run.iter_mut().zip(x_run) {
                            *dw += g * xv;
                        }
                    }
                }
                if let Some(bg) = b_grad.as_deref_mut() {
                    bg[oc] += g;
                }
            }
        }
    }
    in_grad
}

fn maxpool_forward(input: &Tensor) -> Tensor {
    let [h, w, c] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh_n, ow_n) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Tensor::zeros(&[oh_n, ow_n, c]);
    let out_data = out.data_mut();
    for oy in 0..oh_n {
        for ox in 0..ow_n {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = x[((oy * 2 + dy) * w + ox * 2 + dx) * c + ch];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out_data[(oy * ow_n + ox) * c + ch] = best;
            }
        }
    }
    out
}

fn maxpool_backward(input: &Tensor, out_grad: &Tensor) -> Tensor {
    let [h, w, c] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh_n, ow_n) = (h / 2, w / 2);
    let x = input.data();
    let dy = out_grad.data();
    let mut in_grad = Tensor::zeros(&[h, w, c]);
    let dx = in_grad.data_mut();
    for oy in 0..oh_n {
        for ox in 0..ow_n {
            for ch in 0..c {
                // First strict maximum in scan order wins, matching forward.
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for py in 0..2 {
                    for px in 0..2 {
                        let idx = ((oy * 2 + py) * w + ox * 2 + px) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                dx[best_idx] += dy[(oy * ow_n + ox) * c + ch];
            }
        }
    }
    in_grad
}

fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
    let in_n = input.len();
    let out_n = bias.len();
    let x = input.data();
    let wt = weights.data();
    let mut out = Tensor::zeros(&[out_n]);
    let out_data = out.data_mut();
    out_data.copy_from_slice(bias.data());
    for (j, &xv) in x.iter().enumerate().take(in_n) {
        if xv == 0.0 {
            continue;
        }
        let w_row = &wt[j * out_n..(j + 1) * out_n];
        for (o, &wv) in out_data.iter_mut().zip(w_row) {
            *o += xv * wv;
        }
    }
    out
}

fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    out_grad: &Tensor,
    grads: Option<&mut LayerWeights>,
) -> Tensor {
    let in_n = input.len();
    let out_n = out_grad.len();
    let x = input.data();
    let wt = weights.data();
    let dy = out_grad.data();

    let mut in_grad = Tensor::zeros(&[in_n]);
    let dx = in_grad.data_mut();
    for (j, d) in dx.iter_mut().enumerate() {
        *d = dot(&wt[j * out_n..(j + 1) * out_n], dy);
    }

    if let Some(buf) = grads {
        match buf {
            LayerWeights::Dense { weights, bias } => {
                let wg = weights.data_mut();
                for (j, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wg_row = &mut wg[j * out_n..(j + 1) * out_n];
                    for (dw, &g) in wg_row.iter_mut().zip(dy) {
                        *dw += xv * g;
                    }
                }
                let bg = bias.data_mut();
                for (db, &g) in bg.iter_mut().zip(dy) {
                    *db += g;
                }
            }
            _ => unreachable!("gradient buffer shape follows the layer"),
        }
    }
    in_grad
}
