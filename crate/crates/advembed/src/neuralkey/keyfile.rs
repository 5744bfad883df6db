//! Key file serialization.
//!
//! Layout: magic `ADVK`, version u16 LE, u32 LE header length, UTF-8 JSON
//! header (arch, class count, seed, fingerprint, per-layer shapes), then the
//! raw little-endian f32 weights in header order. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layers::LayerWeights;
use super::tensor::Tensor;
use super::{ArchSpec, ModelError, ModelKey};

pub const KEY_FILE_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"ADVK";

#[derive(Debug, Error)]
pub enum KeyfileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes; not a key file")]
    BadMagic,
    #[error("unsupported key file version {0}")]
    UnsupportedVersion(u16),
    #[error("key file is truncated")]
    Truncated,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("weight shapes in header do not match the architecture")]
    WeightShapeMismatch,
    #[error("trailing bytes after weight payload")]
    TrailingData,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct KeyHeader {
    arch: ArchSpec,
    classes: usize,
    seed: u64,
    fingerprint: String,
    /// `(weights_shape, bias_shape)` per layer; `None` for parameter-free layers.
    layer_shapes: Vec<Option<(Vec<usize>, Vec<usize>)>>,
}

fn layer_shapes(weights: &[LayerWeights]) -> Vec<Option<(Vec<usize>, Vec<usize>)>> {
    weights
        .iter()
        .map(|layer| match layer {
            LayerWeights::Conv { weights, bias } | LayerWeights::Dense { weights, bias } => {
                Some((weights.shape().to_vec(), bias.shape().to_vec()))
            }
            LayerWeights::None => None,
        })
        .collect()
}

/// Writes the model to `path` in the key file format.
pub fn save_key(model: &ModelKey, path: &Path) -> Result<(), KeyfileError> {
    let header = KeyHeader {
        arch: model.arch.clone(),
        classes: model.arch.classes,
        seed: model.seed,
        fingerprint: model.fingerprint.clone(),
        layer_shapes: layer_shapes(&model.weights),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| KeyfileError::MalformedHeader(e.to_string()))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&KEY_FILE_VERSION.to_le_bytes())?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for layer in &model.weights {
        for tensor in layer.tensors() {
            for &value in tensor.data() {
                out.write_all(&value.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or_truncated(reader: &mut impl Read, buf: &mut [u8]) -> Result<(), KeyfileError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            KeyfileError::Truncated
        } else {
            KeyfileError::Io(e)
        }
    })
}

/// Reads a model back; predictions of the loaded key are bit-identical to
/// the saved one.
pub fn load_key(path: &Path) -> Result<ModelKey, KeyfileError> {
    let mut reader = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut reader, &mut magic)?;
    if &magic != MAGIC {
        return Err(KeyfileError::BadMagic);
    }

    let mut version = [0u8; 2];
    read_exact_or_truncated(&mut reader, &mut version)?;
    let version = u16::from_le_bytes(version);
    if version != KEY_FILE_VERSION {
        return Err(KeyfileError::UnsupportedVersion(version));
    }

    let mut header_len = [0u8; 4];
    read_exact_or_truncated(&mut reader, &mut header_len)?;
    let header_len = u32::from_le_bytes(header_len) as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact_or_truncated(&mut reader, &mut header_bytes)?;
    let header: KeyHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| KeyfileError::MalformedHeader(e.to_string()))?;

    if header.classes != header.arch.classes {
        return Err(KeyfileError::MalformedHeader(
            "class count disagrees with architecture".into(),
        ));
    }
    let shapes = header.arch.validate()?;

    // The header's layer shapes must be exactly the ones the architecture
    // dictates; anything else means a corrupt or tampered file.
    let expected = expected_layer_shapes(&header.arch, &shapes);
    if header.layer_shapes != expected {
        return Err(KeyfileError::WeightShapeMismatch);
    }

    let mut weights = Vec::with_capacity(header.arch.layers.len());
    for (spec, shape_pair) in header.arch.layers.iter().zip(&header.layer_shapes) {
        match shape_pair {
            None => weights.push(LayerWeights::None),
            Some((w_shape, b_shape)) => {
                let w = read_tensor(&mut reader, w_shape)?;
                let b = read_tensor(&mut reader, b_shape)?;
                weights.push(match spec {
                    super::LayerSpec::Conv { .. } => LayerWeights::Conv { weights: w, bias: b },
                    super::LayerSpec::Dense { .. } => LayerWeights::Dense { weights: w, bias: b },
                    _ => return Err(KeyfileError::WeightShapeMismatch),
                });
            }
        }
    }

    let mut trailing = [0u8; 1];
    match reader.read(&mut trailing)? {
        0 => {}
        _ => return Err(KeyfileError::TrailingData),
    }

    Ok(ModelKey {
        arch: header.arch,
        weights,
        seed: header.seed,
        fingerprint: header.fingerprint,
    })
}

fn expected_layer_shapes(
    arch: &ArchSpec,
    input_shapes: &[Vec<usize>],
) -> Vec<Option<(Vec<usize>, Vec<usize>)>> {
    arch.layers
        .iter()
        .zip(input_shapes)
        .map(|(spec, in_shape)| match spec {
            super::LayerSpec::Conv {
                kernel,
                out_channels,
                ..
            } => Some((
                vec![*out_channels, *kernel, *kernel, in_shape[2]],
                vec![*out_channels],
            )),
            super::LayerSpec::Dense { units } => Some((vec![in_shape[0], *units], vec![*units])),
            _ => None,
        })
        .collect()
}

fn read_tensor(reader: &mut impl Read, shape: &[usize]) -> Result<Tensor, KeyfileError> {
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; count * 4];
    read_exact_or_truncated(reader, &mut bytes)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_vec(shape.to_vec(), data)?)
}
