//! Deterministic built-in encoders.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::vectors::l2_normalize;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ *b as u64).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing of whole tokens and their character trigrams.
///
/// The text is lowercased and split on non-alphanumeric characters. Every
/// feature is hashed with 64-bit FNV-1a; the bucket is `hash % dim` and the
/// sign is negative when bit 63 is set. The result is L2-normalized unless no
/// feature was produced, in which case it is all zeros.
pub fn encode_text_hash_ngram(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim > 0, "dimension must be positive");
    let mut out = vec![0.0f32; dim];
    let lower = text.to_lowercase();
    let mut add = |feature: &str| {
        let h = fnv1a64(feature.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        out[(h % dim as u64) as usize] += sign;
    };
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        add(token);
        let chars: Vec<char> = token.chars().collect();
        for window in chars.windows(3) {
            add(&window.iter().collect::<String>());
        }
    }
    l2_normalize(&mut out);
    out
}

pub fn encode_vector_passthrough(payload: &[f32], dim: usize) -> Result<Vec<f32>> {
    if payload.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: payload.len(),
        });
    }
    Ok(payload.to_vec())
}

pub const COLOR_HIST_BINS: usize = 16;
pub const COLOR_HIST_DIM: usize = 3 * COLOR_HIST_BINS;

/// 16-bin histogram per RGB channel, concatenated R, G, B and L2-normalized.
pub fn encode_image_hist(img: &RgbImage) -> Vec<f32> {
    let mut hist = vec![0.0f32; COLOR_HIST_DIM];
    for px in img.pixels() {
        for (channel, value) in px.0.iter().enumerate() {
            hist[channel * COLOR_HIST_BINS + (*value as usize) / (256 / COLOR_HIST_BINS)] += 1.0;
        }
    }
    l2_normalize(&mut hist);
    hist
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Decode(e.to_string()))
}

/// Element-wise mean of the modality vectors after zero-padding each to the
/// longest one. Stand-in for a joint multi-modal encoder.
pub fn joint_encode<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Vec<f32>> {
    if vectors.is_empty() {
        return Err(Error::InvalidParameter(
            "joint encoding needs at least one modality vector".into(),
        ));
    }
    let width = vectors.iter().map(|v| v.as_ref().len()).max().unwrap_or(0);
    let mut out = vec![0.0f32; width];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.as_ref()) {
            *o += x;
        }
    }
    let n = vectors.len() as f32;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}
