//! Dataset ingestion and image I/O: CIFAR-10 binary records, PNG directory
//! trees, a procedurally generated learnable dataset, and single-image PNG
//! round trips.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neuralkey::{digest_hex, ModelError, Tensor};

const CIFAR_RECORD_LEN: usize = 3073;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("mixed image dimensions: {first:?} vs {other:?}")]
    MixedDimensions {
        first: Vec<usize>,
        other: Vec<usize>,
    },
    #[error("no usable images under {0}")]
    EmptyDataset(PathBuf),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Images with class labels; immutable once loaded.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Content digest; stable across runs for identical content.
    pub id: String,
}

impl LabeledDataset {
    fn assemble(images: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Self {
        let mut parts: Vec<Vec<u8>> = Vec::with_capacity(images.len() * 2 + 1);
        parts.push((classes as u64).to_le_bytes().to_vec());
        for (image, &label) in images.iter().zip(&labels) {
            let mut bytes =
                Vec::with_capacity(image.shape().len() * 8 + image.len() * 4 + 8);
            for &d in image.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in image.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&(label as u64).to_le_bytes());
            parts.push(bytes);
        }
        let part_refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        let id = digest_hex(&part_refs);
        Self {
            images,
            labels,
            classes,
            id,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// The quantization rule shared by PNG I/O and the embedding pipeline:
/// round half up to 255 levels.
pub fn pixel_to_byte(value: f32) -> u8 {
    (value * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn byte_to_pixel(byte: u8) -> f32 {
    f32::from(byte) / 255.0
}

/// Parses CIFAR-10 binary records (1 label byte + 3x1024 channel planes per
/// record) from a file, or from every `*.bin` file of a directory in sorted
/// order. Pixels are scaled to [0, 1]; N = 10.
pub fn load_cifar10_binary(path: &Path) -> Result<LabeledDataset, DataError> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    let files: Vec<PathBuf> = if meta.is_dir() {
        let mut bins: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
            .collect();
        bins.sort();
        if bins.is_empty() {
            return Err(DataError::EmptyDataset(path.to_path_buf()));
        }
        bins
    } else {
        vec![path.to_path_buf()]
    };

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in &files {
        let bytes = fs::read(file).map_err(io_err(file))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(DataError::Format(format!(
                "{} has {} bytes, not a positive multiple of {CIFAR_RECORD_LEN}",
                file.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            let label = usize::from(record[0]);
            if label > 9 {
                return Err(DataError::Format(format!(
                    "label {label} out of range for CIFAR-10"
                )));
            }
            let mut data = vec![0.0f32; 32 * 32 * 3];
            for ch in 0..3 {
                let plane = &record[1 + ch * 1024..1 + (ch + 1) * 1024];
                for (i, &byte) in plane.iter().enumerate() {
                    data[i * 3 + ch] = byte_to_pixel(byte);
                }
            }
            images.push(Tensor::from_vec(vec![32, 32, 3], data)?);
            labels.push(label);
        }
    }
    Ok(LabeledDataset::assemble(images, labels, 10))
}

/// Loads a directory tree of PNGs with one subdirectory per class; classes
/// are numbered by sorted subdirectory name, images ordered by sorted path.
pub fn load_png_dir(path: &Path) -> Result<LabeledDataset, DataError> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(DataError::EmptyDataset(path.to_path_buf()));
    }

    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<Vec<usize>> = None;
    for (class, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for file in &files {
            let tensor = load_png(file)?;
            match &dims {
                None => dims = Some(tensor.shape().to_vec()),
                Some(first) if first != tensor.shape() => {
                    return Err(DataError::MixedDimensions {
                        first: first.clone(),
                        other: tensor.shape().to_vec(),
                    })
                }
                _ => {}
            }
            images.push(tensor);
            labels.push(class);
        }
    }
    if images.is_empty() {
        return Err(DataError::EmptyDataset(path.to_path_buf()));
    }
    let classes = class_dirs.len();
    Ok(LabeledDataset::assemble(images, labels, classes))
}

/// Procedural dataset with per-class noise sigma = 0.1; see
/// [`synth_dataset_with_noise`].
pub fn synth_dataset(
    classes: usize,
    per_class: usize,
    dims: (usize, usize, usize),
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    synth_dataset_with_noise(classes, per_class, dims, 0.1, seed)
}

/// Generates a learnable dataset: each class is a fixed mixture of oriented
/// sinusoidal gratings over a class color bias, and each sample adds
/// Gaussian pixel noise, clamped to [0, 1]. Deterministic for a fixed seed.
pub fn synth_dataset_with_noise(
    classes: usize,
    per_class: usize,
    dims: (usize, usize, usize),
    sigma: f32,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if classes < 2 {
        return Err(DataError::Format(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let (h, w, c) = dims;
    if h == 0 || w == 0 || c == 0 {
        return Err(DataError::Format("image dims must be positive".into()));
    }

    struct Grating {
        angle: f32,
        frequency: f32,
        phase: f32,
        amplitude: f32,
        channel_weights: Vec<f32>,
    }

    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    let span = h.max(w) as f32;
    for class in 0..classes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64 + 1);

        // Color bias on a hue wheel keeps classes apart by construction; the
        // amplitudes are deliberately subtle (a few gray levels under a much
        // stronger noise floor) so trained margins stay in the regime where
        // small-norm targeted perturbations exist, as they do for
        // natural-image classes. The seeded jitter decorrelates different
        // dataset seeds.
        let hue = 2.0 * std::f32::consts::PI * class as f32 / classes as f32;
        let bias: Vec<f32> = (0..c)
            .map(|ch| {
                let offset = 2.0 * std::f32::consts::PI * ch as f32 / 3.0;
                0.5 + 0.012 * (hue + offset).sin() + rng.gen_range(-0.003..0.003)
            })
            .collect();

        let gratings: Vec<Grating> = (0..3)
            .map(|_| Grating {
                angle: rng.gen_range(0.0..std::f32::consts::PI),
                frequency: rng.gen_range(2.0..8.0),
                phase: rng.gen_range(0.0..(2.0 * std::f32::consts::PI)),
                amplitude: rng.gen_range(0.008..0.022),
                channel_weights: (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();

        let mut base = vec![0.0f32; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut value = bias[ch];
                    for g in &gratings {
                        let axis = (x as f32) * g.angle.cos() + (y as f32) * g.angle.sin();
                        let wave = (2.0 * std::f32::consts::PI * g.frequency * axis / span
                            + g.phase)
                            .sin();
                        value += g.amplitude * g.channel_weights[ch] * wave;
                    }
                    base[(y * w + x) * c + ch] = value;
                }
            }
        }

        for _ in 0..per_class {
            let data: Vec<f32> = base
                .iter()
                .map(|&v| (v + sigma * gaussian(&mut rng)).clamp(0.0, 1.0))
                .collect();
            images.push(Tensor::from_vec(vec![h, w, c], data)?);
            labels.push(class);
        }
    }
    Ok(LabeledDataset::assemble(images, labels, classes))
}

/// Standard normal draw via Box-Muller, one value per call.
fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// Writes an HxWx3 tensor as an 8-bit RGB PNG using the shared quantization
/// rule, so `load_png(save_png(x)) == quantize(x)` exactly.
pub fn save_png(image: &Tensor, path: &Path) -> Result<(), DataError> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(DataError::Format(format!(
            "save_png expects HxWx3, got {shape:?}"
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let bytes: Vec<u8> = image.data().iter().map(|&v| pixel_to_byte(v)).collect();
    let buffer: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, bytes)
            .expect("byte buffer matches dimensions");
    buffer.save(path)?;
    Ok(())
}

/// Loads an 8-bit RGB PNG into an HxWx3 tensor with pixels in [0, 1].
pub fn load_png(path: &Path) -> Result<Tensor, DataError> {
    let decoded = image::open(path)?.into_rgb8();
    let (w, h) = decoded.dimensions();
    let data: Vec<f32> = decoded.as_raw().iter().map(|&b| byte_to_pixel(b)).collect();
    Ok(Tensor::from_vec(vec![h as usize, w as usize, 3], data)?)
}
