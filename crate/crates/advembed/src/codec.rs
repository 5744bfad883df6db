//! Message arithmetic: binary/base-N conversion, chunk splitting for
//! multi-class embedding, and capacity/density analytics.
//!
//! Everything here is pure integer math; no model or image code.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("base must be >= 2, got {0}")]
    InvalidBase(u32),
    #[error("bit values must be 0 or 1")]
    InvalidBit,
    #[error("digit {digit} out of range for base {base}")]
    InvalidDigit { digit: u32, base: u32 },
    #[error("chunk size k={k} must satisfy 1 <= k <= base {base}")]
    InvalidChunkSize { k: usize, base: u32 },
    #[error("digit value exceeds 2^{bit_length} - 1; stego sequence is corrupt")]
    DigitOverflow { bit_length: usize },
}

/// A secret payload as an ordered bit sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMessage {
    bits: Vec<u8>,
}

impl BitMessage {
    /// Builds a message from raw bit values; every element must be 0 or 1.
    pub fn new(bits: Vec<u8>) -> Result<Self, CodecError> {
        if bits.iter().any(|&b| b > 1) {
            return Err(CodecError::InvalidBit);
        }
        Ok(Self { bits })
    }

    /// Expands bytes to bits, most significant bit first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let bits = bytes
            .iter()
            .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1))
            .collect();
        Self { bits }
    }

    /// Packs bits back into bytes (MSB first); a trailing partial byte is
    /// zero-padded in its low bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)))
            })
            .collect()
    }

    /// Uniformly random message of `len` bits.
    pub fn random<R: RngCore>(len: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..len).map(|_| rng.gen_range(0..=1u8)).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// The payload re-expressed as base-N digits, one digit per stego image for
/// single-class embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitMessage {
    pub digits: Vec<u32>,
    pub base: u32,
    /// Original message length in bits; needed to restore leading zeros.
    pub declared_bit_length: usize,
}

/// Ordered chunks of pairwise-distinct digits; one chunk is embedded per
/// stego image as an exact top-k class ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub chunks: Vec<Vec<u32>>,
    pub k: usize,
    pub base: u32,
}

impl ChunkPlan {
    pub fn chunk_lengths(&self) -> Vec<usize> {
        self.chunks.iter().map(Vec::len).collect()
    }

    pub fn digit_count(&self) -> usize {
        self.chunks.iter().map(Vec::len).sum()
    }
}

/// Converts a bit message into exactly `required_images(L, N)` base-N digits,
/// most significant first, left-padded with zero digits.
pub fn encode_base_n(message: &BitMessage, base: u32) -> Result<DigitMessage, CodecError> {
    if base < 2 {
        return Err(CodecError::InvalidBase(base));
    }
    let width = required_images(message.len(), base)?;
    let mut value = BigUint::zero();
    for &bit in message.bits() {
        value = (value << 1u8) | BigUint::from(bit);
    }

    let divisor = BigUint::from(base);
    let mut digits = Vec::with_capacity(width);
    while !value.is_zero() {
        let (quotient, remainder) = value.div_rem(&divisor);
        digits.push(remainder.to_u32().expect("remainder < base fits in u32"));
        value = quotient;
    }
    digits.resize(width, 0);
    digits.reverse();

    Ok(DigitMessage {
        digits,
        base,
        declared_bit_length: message.len(),
    })
}

/// Exact inverse of [`encode_base_n`] for the declared bit length.
pub fn decode_base_n(message: &DigitMessage) -> Result<BitMessage, CodecError> {
    if message.base < 2 {
        return Err(CodecError::InvalidBase(message.base));
    }
    let base = BigUint::from(message.base);
    let mut value = BigUint::zero();
    for &digit in &message.digits {
        if digit >= message.base {
            return Err(CodecError::InvalidDigit {
                digit,
                base: message.base,
            });
        }
        value = value * &base + BigUint::from(digit);
    }

    let len = message.declared_bit_length;
    if value.bits() > len as u64 {
        return Err(CodecError::DigitOverflow { bit_length: len });
    }
    let bits = (0..len)
        .map(|i| u8::from(value.bit((len - 1 - i) as u64)))
        .collect();
    Ok(BitMessage { bits })
}

/// Number of base-N digits (= images) needed for an L-bit message: the
/// smallest count with N^count >= 2^L, computed with exact integer
/// comparisons rather than floating-point logs.
pub fn required_images(bit_length: usize, base: u32) -> Result<usize, CodecError> {
    if base < 2 {
        return Err(CodecError::InvalidBase(base));
    }
    let target = BigUint::one() << bit_length;
    let mut power = BigUint::one();
    let mut count = 0usize;
    while power < target {
        power *= base;
        count += 1;
    }
    Ok(count)
}

/// Greedy left-to-right chunking: a chunk is cut as soon as the next digit
/// already occurs in it, or when it reaches k digits.
pub fn split_into_chunks(message: &DigitMessage, k: usize) -> Result<ChunkPlan, CodecError> {
    if k == 0 || k as u64 > message.base as u64 {
        return Err(CodecError::InvalidChunkSize {
            k,
            base: message.base,
        });
    }
    let mut chunks = Vec::new();
    let mut current: Vec<u32> = Vec::with_capacity(k);
    for &digit in &message.digits {
        if digit >= message.base {
            return Err(CodecError::InvalidDigit {
                digit,
                base: message.base,
            });
        }
        if current.len() == k || current.contains(&digit) {
            chunks.push(std::mem::take(&mut current));
        }
        current.push(digit);
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    Ok(ChunkPlan {
        chunks,
        k,
        base: message.base,
    })
}

/// Bits one digit carries under the per-image budget convention used for
/// capacity accounting: floor(log2 N), e.g. 3 bits for a 10-class model.
pub fn bits_per_digit(base: u32) -> usize {
    debug_assert!(base >= 2);
    (31 - base.leading_zeros()) as usize
}

/// Closed-form two-class average capacity in bits per image: a full pair of
/// distinct digits with probability 1 - 1/N, a forced single digit with
/// probability 1/N.
pub fn expected_capacity_k2(base: u32) -> Result<f64, CodecError> {
    if base < 2 {
        return Err(CodecError::InvalidBase(base));
    }
    let b = bits_per_digit(base) as f64;
    let n = base as f64;
    Ok(2.0 * b * (1.0 - 1.0 / n) + b * (1.0 / n))
}

/// Monte-Carlo density estimate for random messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub avg_images_per_message: f64,
    pub bits_per_pixel: f64,
}

/// Simulates chunking of random messages and reports the average image count
/// and embedding density. Message bits are converted to digits at the paper's
/// per-digit budget of floor(log2 N) bits; deterministic for a fixed seed.
pub fn simulate_density(
    base: u32,
    k: usize,
    num_messages: usize,
    message_bits: usize,
    pixels_per_image: usize,
    seed: u64,
) -> Result<DensityEstimate, CodecError> {
    if base < 2 {
        return Err(CodecError::InvalidBase(base));
    }
    if k == 0 || k as u64 > base as u64 {
        return Err(CodecError::InvalidChunkSize { k, base });
    }
    if num_messages == 0 || message_bits == 0 {
        return Ok(DensityEstimate {
            avg_images_per_message: 0.0,
            bits_per_pixel: 0.0,
        });
    }

    let digits_per_message = message_bits.div_ceil(bits_per_digit(base));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total_images = 0usize;
    for _ in 0..num_messages {
        let digits: Vec<u32> = (0..digits_per_message)
            .map(|_| rng.gen_range(0..base))
            .collect();
        let message = DigitMessage {
            digits,
            base,
            declared_bit_length: message_bits,
        };
        total_images += split_into_chunks(&message, k)?.chunks.len();
    }

    let avg_images = total_images as f64 / num_messages as f64;
    let bpp = message_bits as f64 / (avg_images * pixels_per_image as f64);
    Ok(DensityEstimate {
        avg_images_per_message: avg_images,
        bits_per_pixel: bpp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_empty_message() {
        let msg = BitMessage::new(vec![]).unwrap();
        let enc = encode_base_n(&msg, 10).unwrap();
        assert!(enc.digits.is_empty());
        assert_eq!(decode_base_n(&enc).unwrap(), msg);
    }

    #[test]
    fn encode_value_ten_in_base_ten() {
        // 1010 in binary = 10, required_images(4, 10) = 2 -> "10"
        let msg = BitMessage::new(vec![1, 0, 1, 0]).unwrap();
        let enc = encode_base_n(&msg, 10).unwrap();
        assert_eq!(enc.digits, vec![1, 0]);
    }

    #[test]
    fn encode_matches_integer_value_u128() {
        // Independent oracle: evaluate both the bits and the digits as u128.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let msg = BitMessage::random(64, &mut rng);
            let enc = encode_base_n(&msg, 10).unwrap();
            assert_eq!(enc.digits.len(), 20);

            let bit_value = msg
                .bits()
                .iter()
                .fold(0u128, |acc, &b| (acc << 1) | u128::from(b));
            let digit_value = enc
                .digits
                .iter()
                .fold(0u128, |acc, &d| acc * 10 + u128::from(d));
            assert_eq!(bit_value, digit_value);
        }
    }

    #[test]
    fn decode_restores_leading_zeros() {
        let dec = decode_base_n(&DigitMessage {
            digits: vec![1, 0],
            base: 10,
            declared_bit_length: 4,
        })
        .unwrap();
        assert_eq!(dec.bits(), &[1, 0, 1, 0]);

        let all_zero = decode_base_n(&DigitMessage {
            digits: vec![0, 0, 0],
            base: 10,
            declared_bit_length: 3,
        })
        .unwrap();
        assert_eq!(all_zero.bits(), &[0, 0, 0]);
    }

    #[test]
    fn decode_rejects_overflowing_value() {
        // 99 > 2^4 - 1
        let err = decode_base_n(&DigitMessage {
            digits: vec![9, 9],
            base: 10,
            declared_bit_length: 4,
        })
        .unwrap_err();
        assert_eq!(err, CodecError::DigitOverflow { bit_length: 4 });
    }

    #[test]
    fn decode_rejects_digit_out_of_base() {
        let err = decode_base_n(&DigitMessage {
            digits: vec![3],
            base: 3,
            declared_bit_length: 2,
        })
        .unwrap_err();
        assert_eq!(err, CodecError::InvalidDigit { digit: 3, base: 3 });
    }

    #[test]
    fn required_images_known_values() {
        assert_eq!(required_images(52, 10).unwrap(), 16);
        assert_eq!(required_images(0, 10).unwrap(), 0);
        assert_eq!(required_images(0, 2).unwrap(), 0);
        assert_eq!(required_images(3, 10).unwrap(), 1);
        assert_eq!(required_images(4, 10).unwrap(), 2);
        assert_eq!(required_images(40, 10).unwrap(), 13);
        // Exact power boundary: 8^2 = 2^6 exactly.
        assert_eq!(required_images(6, 8).unwrap(), 2);
        assert_eq!(required_images(7, 8).unwrap(), 3);
    }

    #[test]
    fn required_images_rejects_base_one() {
        assert_eq!(
            required_images(8, 1).unwrap_err(),
            CodecError::InvalidBase(1)
        );
    }

    #[test]
    fn chunking_reproduces_worked_example() {
        // 29234652 in base 100 with k=3.
        let msg = DigitMessage {
            digits: vec![29, 23, 46, 52],
            base: 100,
            declared_bit_length: 25,
        };
        let plan = split_into_chunks(&msg, 3).unwrap();
        assert_eq!(plan.chunks, vec![vec![29, 23, 46], vec![52]]);
    }

    #[test]
    fn chunking_cuts_on_repeat() {
        let msg = DigitMessage {
            digits: vec![3, 3],
            base: 10,
            declared_bit_length: 7,
        };
        let plan = split_into_chunks(&msg, 3).unwrap();
        assert_eq!(plan.chunks, vec![vec![3], vec![3]]);
    }

    #[test]
    fn chunking_rejects_bad_k() {
        let msg = DigitMessage {
            digits: vec![1],
            base: 10,
            declared_bit_length: 4,
        };
        assert!(split_into_chunks(&msg, 0).is_err());
        assert!(split_into_chunks(&msg, 11).is_err());
        assert!(split_into_chunks(&msg, 10).is_ok());
    }

    #[test]
    fn capacity_matches_paper_accounting() {
        // 6 * 90% + 3 * 10% = 5.7 bits for a 10-class model.
        assert!((expected_capacity_k2(10).unwrap() - 5.7).abs() < 1e-12);
        assert!((expected_capacity_k2(2).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn density_single_class_is_exact() {
        let est = simulate_density(10, 1, 100, 3, 3072, 99).unwrap();
        assert_eq!(est.avg_images_per_message, 1.0);
        assert_eq!(est.bits_per_pixel, 3.0 / 3072.0);
    }

    #[test]
    fn density_two_class_matches_closed_form() {
        let est = simulate_density(10, 2, 200, 6643, 3072, 4).unwrap();
        let reference = 1.86e-3;
        assert!(
            (est.bits_per_pixel - reference).abs() / reference < 0.05,
            "bpp {} not within 5% of {}",
            est.bits_per_pixel,
            reference
        );
        // Agreement with the closed-form k=2 capacity within 2%.
        let theory = expected_capacity_k2(10).unwrap() / 3072.0;
        assert!((est.bits_per_pixel - theory).abs() / theory < 0.02);
    }

    #[test]
    fn density_is_seed_deterministic() {
        let a = simulate_density(10, 4, 50, 512, 3072, 11).unwrap();
        let b = simulate_density(10, 4, 50, 512, 3072, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn density_rises_with_k() {
        let mut last = 0.0;
        for k in 2..=9 {
            let est = simulate_density(10, k, 50, 6643, 3072, 2).unwrap();
            assert!(
                est.bits_per_pixel > last,
                "density did not rise at k={k}: {} <= {last}",
                est.bits_per_pixel
            );
            last = est.bits_per_pixel;
        }
    }

    #[test]
    fn bit_message_byte_round_trip() {
        let bytes = b"hello";
        let msg = BitMessage::from_bytes(bytes);
        assert_eq!(msg.len(), 40);
        assert_eq!(msg.to_bytes(), bytes);
    }

    #[test]
    fn bit_message_rejects_non_bits() {
        assert_eq!(BitMessage::new(vec![0, 2]).unwrap_err(), CodecError::InvalidBit);
    }

    proptest! {
        #[test]
        fn round_trip_identity(len in 0usize..256, base in 2u32..=1000, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let msg = BitMessage::random(len, &mut rng);
            let enc = encode_base_n(&msg, base).unwrap();
            prop_assert_eq!(enc.digits.len(), required_images(len, base).unwrap());
            let dec = decode_base_n(&enc).unwrap();
            prop_assert_eq!(dec, msg);
        }

        #[test]
        fn chunk_concat_identity(digit_count in 0usize..200, base in 2u32..50, k_offset in 0u32..10, seed in 0u64..1000) {
            let k = 1 + (k_offset % base) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let digits: Vec<u32> = (0..digit_count).map(|_| rng.gen_range(0..base)).collect();
            let msg = DigitMessage { digits: digits.clone(), base, declared_bit_length: 0 };
            let plan = split_into_chunks(&msg, k).unwrap();

            let rejoined: Vec<u32> = plan.chunks.iter().flatten().copied().collect();
            prop_assert_eq!(rejoined, digits);
            for chunk in &plan.chunks {
                prop_assert!(chunk.len() <= k);
                prop_assert!(!chunk.is_empty());
                let mut sorted = chunk.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), chunk.len(), "duplicate digit within a chunk");
            }
            prop_assert!(plan.chunks.len() >= digit_count.div_ceil(k));
        }

        #[test]
        fn required_images_monotonicity(len in 0usize..128, base in 2u32..64) {
            let here = required_images(len, base).unwrap();
            prop_assert!(required_images(len + 1, base).unwrap() >= here);
            prop_assert!(required_images(len, base + 1).unwrap() <= here);
        }
    }
}
