//! The secret model key: a small deterministic CNN classifier.
//!
//! The network doubles as encoder driver (via input gradients) and decoder
//! (via class predictions). Reproducibility is a correctness property here:
//! the same architecture, seed, dataset and schedule must yield bit-identical
//! weights, because the model itself is the shared secret.

mod keyfile;
mod layers;
mod tensor;
mod train;

pub use keyfile::{load_key, save_key, KeyfileError, KEY_FILE_VERSION};
pub use layers::{LayerSpec, LayerWeights};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor data length {got} does not match shape product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("tensor contains a non-finite value")]
    NonFiniteValue,
    #[error("class index {class} out of range for {classes} classes")]
    InvalidClassIndex { class: usize, classes: usize },
    #[error("top-k parameter {k} out of range 1..={classes}")]
    InvalidTopK { k: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// Architecture description: input dimensions, layer stack, class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Input dimensions as (height, width, channels).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl ArchSpec {
    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.input.0, self.input.1, self.input.2]
    }

    /// Checks layer chaining and that the stack ends in `dense(classes)`;
    /// returns every layer's input shape plus the final output shape.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        if self.classes < 2 {
            return Err(ModelError::InvalidArch(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.input.0 == 0 || self.input.1 == 0 || self.input.2 == 0 {
            return Err(ModelError::InvalidArch("input dims must be positive".into()));
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == self.classes => {}
            _ => {
                return Err(ModelError::InvalidArch(
                    "final layer must be dense(classes)".into(),
                ))
            }
        }
        let mut shapes = vec![self.input_shape()];
        for spec in &self.layers {
            let next = layers::output_shape(spec, shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("arch serializes")
    }
}

/// The secret key: architecture plus trained weights.
///
/// Possession of an equal `ModelKey` is what enables decoding; the
/// fingerprint digests the provenance (init seed and training schedule).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelKey {
    pub arch: ArchSpec,
    pub weights: Vec<LayerWeights>,
    pub seed: u64,
    pub fingerprint: String,
}

impl ModelKey {
    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.arch.input_shape()
    }

    fn check_image(&self, image: &Tensor) -> Result<(), ModelError> {
        let expected = self.input_shape();
        if image.shape() != expected.as_slice() {
            return Err(ModelError::ShapeMismatch {
                expected,
                got: image.shape().to_vec(),
            });
        }
        Ok(())
    }
}

pub(crate) fn digest_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn init_fingerprint(arch: &ArchSpec, seed: u64) -> String {
    digest_hex(&[
        b"advembed-model",
        arch.to_canonical_json().as_bytes(),
        &seed.to_le_bytes(),
        b"untrained",
    ])
}

/// Builds a model with deterministic He-uniform weights for (arch, seed).
pub fn build_model(arch: &ArchSpec, seed: u64) -> Result<ModelKey, ModelError> {
    let shapes = arch.validate()?;
    let mut rng = rand::SeedableRng::seed_from_u64(seed);
    let weights = arch
        .layers
        .iter()
        .zip(&shapes)
        .map(|(spec, in_shape)| layers::init_weights(spec, in_shape, &mut rng))
        .collect();
    Ok(ModelKey {
        fingerprint: init_fingerprint(arch, seed),
        arch: arch.clone(),
        weights,
        seed,
    })
}

/// Raw class scores before softmax.
pub(crate) fn logits(model: &ModelKey, image: &Tensor) -> Result<Tensor, ModelError> {
    model.check_image(image)?;
    let mut current = image.clone();
    for (spec, weights) in model.arch.layers.iter().zip(&model.weights) {
        current = layers::forward(spec, weights, &current);
    }
    Ok(current)
}

fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Class probability vector (softmax over the logits).
pub fn predict(model: &ModelKey, image: &Tensor) -> Result<Vec<f32>, ModelError> {
    Ok(softmax(logits(model, image)?.data()))
}

/// Classes sorted by descending probability; ties broken by ascending class
/// index so decoding is deterministic.
pub fn top_k_classes(model: &ModelKey, image: &Tensor, k: usize) -> Result<Vec<usize>, ModelError> {
    if k == 0 || k > model.classes() {
        return Err(ModelError::InvalidTopK {
            k,
            classes: model.classes(),
        });
    }
    let probs = predict(model, image)?;
    Ok(rank_classes(&probs, k))
}

/// Shared ranking rule: descending score, ascending index on ties.
pub fn rank_classes(scores: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    order
}

pub(crate) struct ForwardTrace {
    /// `inputs[i]` is the input fed to layer i; the last entry is the logits.
    inputs: Vec<Tensor>,
}

fn forward_trace(model: &ModelKey, image: &Tensor) -> Result<ForwardTrace, ModelError> {
    model.check_image(image)?;
    let mut inputs = Vec::with_capacity(model.arch.layers.len() + 1);
    inputs.push(image.clone());
    for (spec, weights) in model.arch.layers.iter().zip(&model.weights) {
        let next = layers::forward(spec, weights, inputs.last().expect("non-empty"));
        inputs.push(next);
    }
    Ok(ForwardTrace { inputs })
}

/// Backpropagates a logit-space gradient to the input; parameter gradients
/// are accumulated into `grads` when provided.
fn backprop(
    model: &ModelKey,
    trace: &ForwardTrace,
    logit_grad: Tensor,
    mut grads: Option<&mut Vec<LayerWeights>>,
) -> Tensor {
    let mut grad = logit_grad;
    for idx in (0..model.arch.layers.len()).rev() {
        let layer_grads = grads.as_mut().map(|g| &mut g[idx]);
        grad = layers::backward(
            &model.arch.layers[idx],
            &model.weights[idx],
            &trace.inputs[idx],
            &grad,
            layer_grads,
        );
    }
    grad
}

pub(crate) fn softmax_trace(trace: &ForwardTrace) -> Vec<f32> {
    softmax(trace.inputs.last().expect("trace has logits").data())
}

/// Gradient of the summed weighted cross-entropy `sum_i w_i * CE(f(x), c_i)`
/// with respect to the input pixels. All targets share one forward and one
/// backward pass; the logit gradient is `(sum_i w_i) * p - scatter(w)`.
pub fn weighted_input_gradient(
    model: &ModelKey,
    image: &Tensor,
    targets: &[(usize, f32)],
) -> Result<Tensor, ModelError> {
    for &(class, _) in targets {
        if class >= model.classes() {
            return Err(ModelError::InvalidClassIndex {
                class,
                classes: model.classes(),
            });
        }
    }
    let trace = forward_trace(model, image)?;
    let probs = softmax_trace(&trace);
    let total_weight: f32 = targets.iter().map(|&(_, w)| w).sum();
    let mut logit_grad: Vec<f32> = probs.iter().map(|&p| total_weight * p).collect();
    for &(class, weight) in targets {
        logit_grad[class] -= weight;
    }
    let logit_grad = Tensor::from_vec(vec![model.classes()], logit_grad)?;
    Ok(backprop(model, &trace, logit_grad, None))
}

/// Gradient of `CE(f(x), target)` with respect to the input pixels.
pub fn loss_gradient_wrt_input(
    model: &ModelKey,
    image: &Tensor,
    target_class: usize,
) -> Result<Tensor, ModelError> {
    weighted_input_gradient(model, image, &[(target_class, 1.0)])
}

/// Cross-entropy of the prediction against a single target class.
pub fn cross_entropy_loss(
    model: &ModelKey,
    image: &Tensor,
    target_class: usize,
) -> Result<f32, ModelError> {
    if target_class >= model.classes() {
        return Err(ModelError::InvalidClassIndex {
            class: target_class,
            classes: model.classes(),
        });
    }
    let probs = predict(model, image)?;
    Ok(-(probs[target_class].max(1e-12)).ln())
}

/// The default desk-scale architecture: two conv/pool blocks and two dense
/// layers on a 32x32x3 input.
pub fn desk_arch(classes: usize) -> ArchSpec {
    family_arch((32, 32, 3), classes, 1.0, 2)
}

/// Architecture template behind the model family: `depth` conv blocks with
/// channel counts scaled by `width_multiplier`, then dense(64w), dense(N).
pub fn family_arch(
    input: (usize, usize, usize),
    classes: usize,
    width_multiplier: f32,
    depth: usize,
) -> ArchSpec {
    let scaled = |base: usize| ((base as f32 * width_multiplier).round() as usize).max(2);
    let mut layers = Vec::new();
    let mut channels = 16usize;
    for _ in 0..depth {
        layers.push(LayerSpec::Conv {
            kernel: 3,
            out_channels: scaled(channels),
            stride: 1,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2);
        channels *= 2;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { units: scaled(64) });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dense { units: classes });
    ArchSpec {
        input,
        layers,
        classes,
    }
}

/// Grid of architecture variants and seeds standing in for an architecture
/// search: every member shares input dims and class count.
#[derive(Debug, Clone)]
pub struct FamilyGrid {
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub width_multipliers: Vec<f32>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl FamilyGrid {
    pub fn len(&self) -> usize {
        self.width_multipliers.len() * self.depths.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deterministic list of models over the (width, depth, seed) grid.
pub fn generate_model_family(grid: &FamilyGrid) -> Result<Vec<ModelKey>, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::InvalidArch("model family grid is empty".into()));
    }
    let mut family = Vec::with_capacity(grid.len());
    for &width in &grid.width_multipliers {
        for &depth in &grid.depths {
            let arch = family_arch(grid.input, grid.classes, width, depth);
            for &seed in &grid.seeds {
                family.push(build_model(&arch, seed)?);
            }
        }
    }
    Ok(family)
}
