//! Minibatch SGD training with momentum.
//!
//! The whole schedule (shuffle order, batch boundaries, accumulation order)
//! is a pure function of the arguments, so training the same model twice
//! yields bit-identical weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{self, LayerWeights};
use super::tensor::Tensor;
use super::{digest_hex, forward_trace, rank_classes, softmax_trace, ModelError, ModelKey};
use crate::data::LabeledDataset;

const MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.005,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelKey,
    pub final_train_accuracy: f64,
    pub epoch_mean_losses: Vec<f64>,
}

fn train_fingerprint(prev: &str, dataset: &LabeledDataset, config: &TrainConfig) -> String {
    digest_hex(&[
        b"advembed-train",
        prev.as_bytes(),
        dataset.id.as_bytes(),
        &(config.epochs as u64).to_le_bytes(),
        &config.learning_rate.to_le_bytes(),
        &(config.batch_size as u64).to_le_bytes(),
        &config.seed.to_le_bytes(),
    ])
}

/// Trains a copy of the model and reports its final train-set accuracy.
pub fn train(
    model: &ModelKey,
    dataset: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if dataset.images.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(ModelError::InvalidArch("batch_size must be positive".into()));
    }
    let classes = model.classes();
    for &label in &dataset.labels {
        if label >= classes {
            return Err(ModelError::LabelOutOfRange { label, classes });
        }
    }
    let input_shape = model.input_shape();
    for image in &dataset.images {
        if image.shape() != input_shape.as_slice() {
            return Err(ModelError::ShapeMismatch {
                expected: input_shape,
                got: image.shape().to_vec(),
            });
        }
    }

    let mut trained = model.clone();
    let mut velocity: Vec<LayerWeights> =
        trained.weights.iter().map(layers::zeros_like).collect();
    let mut grads: Vec<LayerWeights> = trained.weights.iter().map(layers::zeros_like).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.images.len()).collect();
    let mut epoch_mean_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            for buffer in &mut grads {
                zero_buffer(buffer);
            }
            for &idx in batch {
                let trace = forward_trace(&trained, &dataset.images[idx])?;
                let probs = softmax_trace(&trace);
                let label = dataset.labels[idx];
                loss_sum += -f64::from(probs[label].max(1e-12)).ln();

                let mut logit_grad = probs;
                logit_grad[label] -= 1.0;
                let logit_grad = Tensor::from_vec(vec![classes], logit_grad)?;
                super::backprop(&trained, &trace, logit_grad, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f32;
            apply_momentum_step(
                &mut trained.weights,
                &mut velocity,
                &grads,
                config.learning_rate,
                scale,
            );
        }
        epoch_mean_losses.push(loss_sum / dataset.images.len() as f64);
    }

    trained.fingerprint = train_fingerprint(&model.fingerprint, dataset, config);

    let mut correct = 0usize;
    for (image, &label) in dataset.images.iter().zip(&dataset.labels) {
        let probs = super::predict(&trained, image)?;
        if rank_classes(&probs, 1)[0] == label {
            correct += 1;
        }
    }

    Ok(TrainOutcome {
        model: trained,
        final_train_accuracy: correct as f64 / dataset.images.len() as f64,
        epoch_mean_losses,
    })
}

fn zero_buffer(buffer: &mut LayerWeights) {
    match buffer {
        LayerWeights::Conv { weights, bias } | LayerWeights::Dense { weights, bias } => {
            weights.data_mut().fill(0.0);
            bias.data_mut().fill(0.0);
        }
        LayerWeights::None => {}
    }
}

fn apply_momentum_step(
    weights: &mut [LayerWeights],
    velocity: &mut [LayerWeights],
    grads: &[LayerWeights],
    learning_rate: f32,
    grad_scale: f32,
) {
    for ((w, v), g) in weights.iter_mut().zip(velocity).zip(grads) {
        let pairs: [(&mut Tensor, &mut Tensor, &Tensor); 2] = match (w, v, g) {
            (
                LayerWeights::Conv { weights: w0, bias: b0 },
                LayerWeights::Conv { weights: w1, bias: b1 },
                LayerWeights::Conv { weights: w2, bias: b2 },
            )
            | (
                LayerWeights::Dense { weights: w0, bias: b0 },
                LayerWeights::Dense { weights: w1, bias: b1 },
                LayerWeights::Dense { weights: w2, bias: b2 },
            ) => [(w0, w1, w2), (b0, b1, b2)],
            _ => continue,
        };
        for (param, vel, grad) in pairs {
            for ((p, v), &g) in param
                .data_mut()
                .iter_mut()
                .zip(vel.data_mut())
                .zip(grad.data())
            {
                *v = MOMENTUM * *v - learning_rate * grad_scale * g;
                *p += *v;
            }
        }
    }
}
