//! End-to-end embedding and extraction.
//!
//! Embedding composes the codec, chunker and attack and is all-or-nothing: a
//! returned sequence always extracts exactly. The manifest carries the
//! protocol metadata (N, k, bit length, chunk lengths, image order) as a
//! small JSON file next to the PNGs; image order is also pinned by
//! zero-padded filename indices.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{self, AttackConfig, AttackError};
use crate::codec::{self, BitMessage, CodecError, DigitMessage};
use crate::data::{self, DataError};
use crate::neuralkey::{self, ModelError, ModelKey, Tensor};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("attack failed on chunks {failed_chunks:?} (best rate {best_rate:.3})")]
    EmbedFailed {
        failed_chunks: Vec<usize>,
        best_rate: f64,
    },
    #[error("manifest says {manifest_n} classes but the model has {model_n}")]
    ModelMismatch { manifest_n: u32, model_n: usize },
    #[error("models disagree on input dims or class count: {0}")]
    DecoderMismatch(String),
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Wire-format metadata for a stego sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub n: u32,
    pub k: usize,
    pub bit_length: usize,
    pub chunk_lengths: Vec<usize>,
    pub images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_fingerprint: Option<String>,
}

impl Manifest {
    /// Internal consistency: counts, chunk bounds, digit arithmetic.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != MANIFEST_VERSION {
            return Err(PipelineError::ManifestInvalid(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        if self.images.len() != self.chunk_lengths.len() {
            return Err(PipelineError::ManifestInvalid(format!(
                "{} images vs {} chunks",
                self.images.len(),
                self.chunk_lengths.len()
            )));
        }
        if self
            .chunk_lengths
            .iter()
            .any(|&len| len == 0 || len > self.k)
        {
            return Err(PipelineError::ManifestInvalid(
                "chunk lengths must be in 1..=k".into(),
            ));
        }
        let digits: usize = self.chunk_lengths.iter().sum();
        let expected = codec::required_images(self.bit_length, self.n)?;
        if digits != expected {
            return Err(PipelineError::ManifestInvalid(format!(
                "chunk lengths sum to {digits} digits, message needs {expected}"
            )));
        }
        Ok(())
    }
}

/// Ordered stego images plus the manifest describing them.
#[derive(Debug, Clone)]
pub struct StegoSequence {
    pub images: Vec<Tensor>,
    pub manifest: Manifest,
}

/// A successful embedding plus observability data (cover pairing, effort).
#[derive(Debug, Clone)]
pub struct EmbedReport {
    pub sequence: StegoSequence,
    /// Pool index of the cover behind each stego image.
    pub cover_indices: Vec<usize>,
    pub restarts_used: usize,
}

/// 8-bit round trip (round half up to 255 levels); idempotent.
pub fn quantize_image(image: &Tensor) -> Tensor {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = data::byte_to_pixel(data::pixel_to_byte(*v));
    }
    out
}

/// Embeds a bit message: encode to base N, split into chunks, attack one
/// cover per chunk. All-or-nothing: any failed chunk aborts the embedding.
pub fn embed_message(
    bits: &BitMessage,
    model: &ModelKey,
    cover_pool: &[Tensor],
    config: &AttackConfig,
    seed: u64,
) -> Result<EmbedReport, PipelineError> {
    let n = model.classes() as u32;
    let digits = codec::encode_base_n(bits, n)?;
    let plan = codec::split_into_chunks(&digits, config.k)?;
    let outcome = attack::sata_embed(model, cover_pool, &plan, config, seed)?;
    if outcome.best_rate < 1.0 {
        let failed_chunks = outcome
            .per_chunk_success
            .iter()
            .enumerate()
            .filter(|(_, &ok)| !ok)
            .map(|(i, _)| i)
            .collect();
        return Err(PipelineError::EmbedFailed {
            failed_chunks,
            best_rate: outcome.best_rate,
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        n,
        k: config.k,
        bit_length: bits.len(),
        chunk_lengths: plan.chunk_lengths(),
        images: (0..outcome.stego_images.len())
            .map(|i| format!("stego_{i:04}.png"))
            .collect(),
        key_fingerprint: Some(model.fingerprint.clone()),
    };
    manifest.validate()?;
    Ok(EmbedReport {
        sequence: StegoSequence {
            images: outcome.stego_images,
            manifest,
        },
        cover_indices: outcome.cover_indices,
        restarts_used: outcome.restarts_used,
    })
}

/// Reads the ordered top classes of each stego image and decodes the digits
/// back to the original bits.
pub fn extract_message(
    stego: &StegoSequence,
    model: &ModelKey,
) -> Result<BitMessage, PipelineError> {
    stego.manifest.validate()?;
    if stego.manifest.n as u64 != model.classes() as u64 {
        return Err(PipelineError::ModelMismatch {
            manifest_n: stego.manifest.n,
            model_n: model.classes(),
        });
    }
    if stego.images.len() != stego.manifest.images.len() {
        return Err(PipelineError::ManifestInvalid(format!(
            "manifest lists {} images, sequence has {}",
            stego.manifest.images.len(),
            stego.images.len()
        )));
    }

    let mut digits = Vec::with_capacity(stego.manifest.chunk_lengths.iter().sum());
    for (image, &len) in stego.images.iter().zip(&stego.manifest.chunk_lengths) {
        let top = neuralkey::top_k_classes(model, image, len)?;
        digits.extend(top.into_iter().map(|class| class as u32));
    }
    let message = DigitMessage {
        digits,
        base: stego.manifest.n,
        declared_bit_length: stego.manifest.bit_length,
    };
    Ok(codec::decode_base_n(&message)?)
}

/// Fraction of stego images an alternative model classifies exactly like the
/// crafting model (ordered top-chunk-length classes).
pub fn decoding_rate(
    stego: &StegoSequence,
    crafted_with: &ModelKey,
    decoder: &ModelKey,
) -> Result<f64, PipelineError> {
    if crafted_with.input_shape() != decoder.input_shape()
        || crafted_with.classes() != decoder.classes()
    {
        return Err(PipelineError::DecoderMismatch(format!(
            "{:?}/{} vs {:?}/{}",
            crafted_with.input_shape(),
            crafted_with.classes(),
            decoder.input_shape(),
            decoder.classes()
        )));
    }
    if stego.images.is_empty() {
        return Ok(1.0);
    }
    let mut matches = 0usize;
    for (image, &len) in stego.images.iter().zip(&stego.manifest.chunk_lengths) {
        let reference = neuralkey::top_k_classes(crafted_with, image, len)?;
        let decoded = neuralkey::top_k_classes(decoder, image, len)?;
        if reference == decoded {
            matches += 1;
        }
    }
    Ok(matches as f64 / stego.images.len() as f64)
}

/// Writes the manifest and the ordered stego PNGs into `dir`.
pub fn save_sequence(stego: &StegoSequence, dir: &Path) -> Result<(), PipelineError> {
    stego.manifest.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&stego.manifest)
        .map_err(|e| PipelineError::ManifestInvalid(e.to_string()))?;
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    for (image, name) in stego.images.iter().zip(&stego.manifest.images) {
        data::save_png(image, &dir.join(name))?;
    }
    Ok(())
}

/// Loads a sequence saved by [`save_sequence`]; a missing or inconsistent
/// manifest is an error.
pub fn load_sequence(dir: &Path) -> Result<StegoSequence, PipelineError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| PipelineError::ManifestInvalid(e.to_string()))?;
    manifest.validate()?;
    let mut images = Vec::with_capacity(manifest.images.len());
    for name in &manifest.images {
        images.push(data::load_png(&dir.join(name))?);
    }
    Ok(StegoSequence { images, manifest })
}
