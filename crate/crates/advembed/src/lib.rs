//! Adversarial-embedding steganography toolkit.
//!
//! A secret CNN classifier acts as the shared key: messages become base-N
//! digit sequences, digits become targeted adversarial perturbations of cover
//! images, and the recipient decodes by classifying the stego images with the
//! same model. Includes the multi-class sorted attack for higher density,
//! tamper transforms, and steganalysis baselines used by the experiment
//! harness.

pub mod attack;
pub mod codec;
pub mod data;
pub mod neuralkey;
pub mod pipeline;
