//! Shared test support: an independent f64 network evaluator for gradient
//! checks, an LSB-replacement oracle embedder for detector validation, and
//! cached desk-scale fixtures.
#![allow(dead_code)]

use advembed::data::{self, LabeledDataset};
use advembed::neuralkey::{
    build_model, desk_arch, train, ArchSpec, LayerSpec, LayerWeights, ModelKey, Tensor,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

/// Straightforward f64 re-implementation of the forward pass, written
/// independently of the library's f32 path; used as the finite-difference
/// oracle.
pub fn loss_f64(model: &ModelKey, image: &[f64], target: usize) -> f64 {
    let (h, w, c) = model.arch.input;
    let mut shape = (h, w, c);
    let mut current: Vec<f64> = image.to_vec();
    for (spec, weights) in model.arch.layers.iter().zip(&model.weights) {
        match (spec, weights) {
            (
                LayerSpec::Conv { kernel, out_channels, stride },
                LayerWeights::Conv { weights, bias },
            ) => {
                let (ih, iw, ic) = shape;
                let oh = (ih - kernel) / stride + 1;
                let ow = (iw - kernel) / stride + 1;
                let wt = weights.data();
                let b = bias.data();
                let mut out = vec![0.0f64; oh * ow * out_channels];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for oc in 0..*out_channels {
                            let mut acc = f64::from(b[oc]);
                            for kh in 0..*kernel {
                                for kw in 0..*kernel {
                                    for ch in 0..ic {
                                        let iv = current
                                            [((oy * stride + kh) * iw + ox * stride + kw) * ic + ch];
                                        let wv = wt[((oc * kernel + kh) * kernel + kw) * ic + ch];
                                        acc += iv * f64::from(wv);
                                    }
                                }
                            }
                            out[(oy * ow + ox) * out_channels + oc] = acc;
                        }
                    }
                }
                current = out;
                shape = (oh, ow, *out_channels);
            }
            (LayerSpec::Relu, _) => {
                for v in &mut current {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            (LayerSpec::MaxPool2, _) => {
                let (ih, iw, ic) = shape;
                let (oh, ow) = (ih / 2, iw / 2);
                let mut out = vec![0.0f64; oh * ow * ic];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..ic {
                            let mut best = f64::NEG_INFINITY;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let v = current[((oy * 2 + dy) * iw + ox * 2 + dx) * ic + ch];
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                            out[(oy * ow + ox) * ic + ch] = best;
                        }
                    }
                }
                current = out;
                shape = (oh, ow, ic);
            }
            (LayerSpec::Flatten, _) => {
                shape = (1, 1, current.len());
            }
            (LayerSpec::Dense { units }, LayerWeights::Dense { weights, bias }) => {
                let in_n = current.len();
                let wt = weights.data();
                let b = bias.data();
                let mut out = vec![0.0f64; *units];
                for (o, out_v) in out.iter_mut().enumerate() {
                    let mut acc = f64::from(b[o]);
                    for (j, &x) in current.iter().enumerate().take(in_n) {
                        acc += x * f64::from(wt[j * units + o]);
                    }
                    *out_v = acc;
                }
                current = out;
                shape = (1, 1, *units);
            }
            _ => unreachable!("weights follow the layer specs"),
        }
    }

    // Softmax cross-entropy against the target class.
    let max = current.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = current.iter().map(|&v| (v - max).exp()).sum();
    -(current[target] - max - sum.ln())
}

/// Central finite differences of the f64 oracle loss at step h.
pub fn finite_difference_gradient(
    model: &ModelKey,
    image: &Tensor,
    target: usize,
    h: f64,
) -> Vec<f64> {
    let base: Vec<f64> = image.data().iter().map(|&v| f64::from(v)).collect();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            (loss_f64(model, &plus, target) - loss_f64(model, &minus, target)) / (2.0 * h)
        })
        .collect()
}

/// Max relative error between the backprop gradient and the oracle.
pub fn max_relative_error(backprop: &Tensor, oracle: &[f64]) -> f64 {
    backprop
        .data()
        .iter()
        .zip(oracle)
        .map(|(&bp, &fd)| {
            let bp = f64::from(bp);
            (bp - fd).abs() / bp.abs().max(fd.abs()).max(1e-3)
        })
        .fold(0.0, f64::max)
}

/// Difference quotients are only meaningful where the loss is smooth at the
/// step scale; a ReLU kink inside [x-h, x+h] corrupts them. An input is
/// accepted when the h and h/8 central differences agree everywhere, which
/// certifies smoothness using the oracle alone.
pub fn smooth_gradient_image(
    model: &ModelKey,
    shape: &[usize],
    target: usize,
    h: f64,
    base_seed: u64,
) -> (Tensor, Vec<f64>) {
    for offset in 0..50 {
        let image = random_image(shape, base_seed + offset);
        let coarse = finite_difference_gradient(model, &image, target, h);
        let fine = finite_difference_gradient(model, &image, target, h / 8.0);
        let agree = coarse.iter().zip(&fine).all(|(&a, &b)| {
            (a - b).abs() / a.abs().max(b.abs()).max(1e-3) < 2e-3
        });
        if agree {
            return (image, coarse);
        }
    }
    panic!("no kink-free input found near seed {base_seed}");
}

/// Flips bits of the image's 8-bit representation at the given rate: the
/// classic LSB-replacement embedder the detectors must catch.
pub fn lsb_replace(image: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = image.clone();
    for v in out.data_mut() {
        if rng.gen_range(0.0..1.0) < rate {
            let byte = data::pixel_to_byte(*v);
            let bit: u8 = rng.gen_range(0..=1);
            *v = data::byte_to_pixel((byte & 0xfe) | bit);
        }
    }
    out
}

pub fn random_image(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product())
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Seed-pinned desk fixture shared by the integration suites.
pub struct DeskFixture {
    pub model: ModelKey,
    pub train_accuracy: f64,
    pub covers: Vec<Tensor>,
    pub dataset: LabeledDataset,
}

pub const DESK_DATASET_SEED: u64 = 1234;
pub const DESK_MODEL_SEED: u64 = 41;
pub const DESK_TRAIN_SEED: u64 = 7;
pub const DESK_COVER_SEED: u64 = 555;

pub fn desk_fixture() -> &'static DeskFixture {
    static FIXTURE: OnceLock<DeskFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dataset = data::synth_dataset(10, 100, (32, 32, 3), DESK_DATASET_SEED).unwrap();
        let base = build_model(&desk_arch(10), DESK_MODEL_SEED).unwrap();
        let outcome = train(
            &base,
            &dataset,
            &TrainConfig {
                epochs: 14,
                learning_rate: 0.005,
                batch_size: 8,
                seed: DESK_TRAIN_SEED,
            },
        )
        .unwrap();
        let covers_src = data::synth_dataset(10, 12, (32, 32, 3), DESK_COVER_SEED).unwrap();
        let covers: Vec<Tensor> = covers_src
            .images
            .iter()
            .map(advembed::pipeline::quantize_image)
            .collect();
        DeskFixture {
            model: outcome.model,
            train_accuracy: outcome.final_train_accuracy,
            covers,
            dataset,
        }
    })
}

/// Small architectures covering every layer type, used by gradient checks.
pub fn gradient_check_archs() -> Vec<ArchSpec> {
    vec![
        ArchSpec {
            input: (8, 8, 1),
            layers: vec![
                LayerSpec::Conv { kernel: 3, out_channels: 4, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 3 },
            ],
            classes: 3,
        },
        ArchSpec {
            input: (8, 8, 1),
            layers: vec![
                LayerSpec::Conv { kernel: 3, out_channels: 5, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 4 },
            ],
            classes: 4,
        },
        ArchSpec {
            input: (16, 16, 3),
            layers: vec![
                LayerSpec::Conv { kernel: 3, out_channels: 6, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv { kernel: 3, out_channels: 8, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 16 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 5 },
            ],
            classes: 5,
        },
    ]
}
