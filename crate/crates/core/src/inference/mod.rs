//! Encrypted linear-model scoring over block-packed records.
//!
//! Each record occupies one power-of-two block of slots laid out as
//! `[x_1..x_d, 1, 0..]`. The model is packed the same way with the bias in the
//! constant slot, so a slotwise product followed by a rotate-sum over the block
//! leaves `w·x + bias` in the block's first slot. A mask then zeroes every
//! other slot before the single rescale.

mod model;

pub use model::{LinearModel, APPENDIX_LABELS, APPENDIX_RECORDS, DEFAULT_BLOCK_SIZE, DEFAULT_FEATURES};

use thiserror::Error;

use crate::ckks::{Ciphertext, CkksContext, CkksError, GaloisKeys};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("{got} records exceed the batch capacity of {max}")]
    TooManyRecords { got: usize, max: usize },
    #[error("record {index} has {got} features, expected {expected}")]
    BadRecordLength { index: usize, expected: usize, got: usize },
    #[error("record {0} has a non-finite feature")]
    BadRecordValue(usize),
    #[error("block size {0} is not a power of two with room for features, constant and pad")]
    BadBlockSize(usize),
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Ckks(#[from] CkksError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackedBatch {
    pub records: Vec<Vec<f64>>,
    pub block_size: usize,
    pub slot_vector: Vec<f64>,
}

impl PackedBatch {
    pub fn num_blocks(&self) -> usize {
        self.records.len()
    }
}

pub fn pack_records(
    records: &[Vec<f64>],
    features: usize,
    block_size: usize,
    slot_count: usize,
) -> Result<PackedBatch, InferenceError> {
    if !block_size.is_power_of_two() || block_size < features + 2 || slot_count % block_size != 0 {
        return Err(InferenceError::BadBlockSize(block_size));
    }
    let max = slot_count / block_size;
    if records.len() > max {
        return Err(InferenceError::TooManyRecords { got: records.len(), max });
    }
    let mut slots = vec![0.0; slot_count];
    for (b, rec) in records.iter().enumerate() {
        if rec.len() != features {
            return Err(InferenceError::BadRecordLength { index: b, expected: features, got: rec.len() });
        }
        if !rec.iter().all(|x| x.is_finite()) {
            return Err(InferenceError::BadRecordValue(b));
        }
        let block = &mut slots[b * block_size..(b + 1) * block_size];
        block[..features].copy_from_slice(rec);
        block[features] = 1.0;
    }
    Ok(PackedBatch { records: records.to_vec(), block_size, slot_vector: slots })
}

/// `[w_1..w_d, bias, 0..]` repeated for `num_blocks` blocks.
pub fn encode_model(model: &LinearModel, num_blocks: usize) -> Vec<f64> {
    let bs = model.block_size();
    let mut out = vec![0.0; bs * num_blocks];
    for block in out.chunks_mut(bs) {
        block[..model.dimension()].copy_from_slice(model.weights());
        block[model.dimension()] = model.bias();
    }
    out
}

/// Ones at the first slot of each of the first `num_blocks` blocks.
pub fn make_mask(block_size: usize, num_blocks: usize, slot_count: usize) -> Vec<f64> {
    let mut mask = vec![0.0; slot_count];
    for b in 0..num_blocks {
        if let Some(slot) = mask.get_mut(b * block_size) {
            *slot = 1.0;
        }
    }
    mask
}

/// Rotation steps of the rotate-sum: `1, 2, 4, .., block_size/2`.
pub fn rotation_steps(block_size: usize) -> Vec<usize> {
    std::iter::successors(Some(1), |&i| Some(i * 2)).take_while(|&i| i < block_size).collect()
}

/// Plaintext replay of the rotate-sum schedule on a slot vector.
pub fn rotate_sum_plain(slots: &[f64], block_size: usize) -> Vec<f64> {
    let n = slots.len();
    let mut v = slots.to_vec();
    for i in rotation_steps(block_size) {
        v = (0..n).map(|j| v[j] + v[(j + i) % n]).collect();
    }
    v
}

/// Encrypted score of every packed record. Only the first `num_blocks`
/// blocks are unmasked, so records smuggled into further blocks read as zero.
pub fn encrypted_linear_eval(
    ctx: &CkksContext,
    ct: &Ciphertext,
    model: &LinearModel,
    num_blocks: usize,
    gk: &GaloisKeys,
) -> Result<Ciphertext, InferenceError> {
    let slots = ctx.params().slot_count();
    eval(ctx, ct, model, num_blocks, gk, &make_mask(model.block_size(), num_blocks, slots))
}

/// The same pipeline with an all-ones mask, leaving every partial sum in
/// place. Exists for tests of what the mask hides.
#[doc(hidden)]
pub fn encrypted_linear_eval_unmasked(
    ctx: &CkksContext,
    ct: &Ciphertext,
    model: &LinearModel,
    num_blocks: usize,
    gk: &GaloisKeys,
) -> Result<Ciphertext, InferenceError> {
    let slots = ctx.params().slot_count();
    eval(ctx, ct, model, num_blocks, gk, &vec![1.0; slots])
}

fn eval(
    ctx: &CkksContext,
    ct: &Ciphertext,
    model: &LinearModel,
    num_blocks: usize,
    gk: &GaloisKeys,
    mask: &[f64],
) -> Result<Ciphertext, InferenceError> {
    let params = ctx.params();
    let bs = model.block_size();
    let slots = params.slot_count();
    if slots % bs != 0 {
        return Err(InferenceError::BadBlockSize(bs));
    }
    if num_blocks > slots / bs {
        return Err(InferenceError::TooManyRecords { got: num_blocks, max: slots / bs });
    }
    if ct.level() != params.max_level() {
        return Err(CkksError::LevelMismatch.into());
    }
    let level = ct.level();
    let scale = params.default_scale();

    // Tiled over every block, not just the occupied ones: a periodic vector
    // encodes to a sparse polynomial and picks up far less rounding error.
    // Unoccupied blocks hold zero records and are masked anyway.
    let weights = ctx.encode(&encode_model(model, slots / bs), scale, level)?;
    let mut acc = ctx.multiply_plain(ct, &weights)?;
    for step in rotation_steps(bs) {
        let rotated = ctx.rotate_vector(&acc, step, gk)?;
        acc = ctx.add(&acc, &rotated)?;
    }
    let mask = ctx.encode(mask, scale, level)?;
    let masked = ctx.multiply_plain(&acc, &mask)?;
    Ok(ctx.rescale_to_next(&masked)?)
}

/// Exact `w·x + bias`.
pub fn oracle_linear(record: &[f64], model: &LinearModel) -> f64 {
    record.iter().zip(model.weights()).map(|(x, w)| x * w).sum::<f64>() + model.bias()
}

/// Sigmoid at 0.5, i.e. the sign of the score; a score of exactly 0 is 1.
pub fn predict_label(score: f64) -> u8 {
    u8::from(score >= 0.0)
}

/// Scores read from the first slot of each block.
pub fn block_scores(slots: &[f64], block_size: usize, num_blocks: usize) -> Vec<f64> {
    (0..num_blocks).map(|b| slots[b * block_size]).collect()
}
