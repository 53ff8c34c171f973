//! Approximate-arithmetic homomorphic encryption (CKKS) over the RNS ring.
//!
//! Only the operations a linear-model evaluation needs are provided:
//! symmetric encryption, addition, plaintext multiplication, slot rotation,
//! rescaling and noise flooding. Nothing here is constant-time; the module is
//! meant for experimentation, not for protecting real secrets.

mod cipher;
mod encoding;
mod evaluator;
mod keys;
mod params;

pub use cipher::{Ciphertext, Plaintext, SecretKey, ENCODE_HEADROOM_BITS, MAX_SLOT_MAGNITUDE};
pub use evaluator::{scales_match, DEFAULT_FLOOD_BITS, FLOOD_SLOT_BUDGET, SCALE_RELATIVE_TOLERANCE};
pub use keys::{galois_element, GaloisKey, GaloisKeys};
pub(crate) use keys::digits_for;
pub use params::{
    join_real, split_real, CkksContext, CkksParams, ParamsDigest, SecurityLevel, DEFAULT_KS_BASE_LOG,
    DEFAULT_SIGMA, DEMO_DEGREE, DEMO_PRIME_BITS, DEMO_SCALE_LOG2, SECURITY_TABLE,
};

use thiserror::Error;

use crate::ring::RingError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CkksError {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("encoding needs {needed_bits:.1} bits but only {available_bits:.1} are available")]
    ScaleOverflow { needed_bits: f64, available_bits: f64 },
    #[error("{got} values exceed the {max} available slots")]
    TooManyValues { got: usize, max: usize },
    #[error("objects were made under different parameters")]
    ParamMismatch,
    #[error("scales differ: {left} vs {right}")]
    ScaleMismatch { left: f64, right: f64 },
    #[error("operands are at different levels")]
    LevelMismatch,
    #[error("rotation step {0} outside 1..N/2")]
    BadStep(usize),
    #[error("no galois key for rotation by {0}")]
    MissingGaloisKey(usize),
    #[error("modulus chain exhausted")]
    ChainExhausted,
    #[error("flood of 2^{bits}·sigma exceeds the scale headroom ({})", flood_limit(.max_bits))]
    FloodOverflow { bits: u32, max_bits: Option<u32> },
}

fn flood_limit(max_bits: &Option<u32>) -> String {
    match max_bits {
        Some(b) => format!("at most {b} bits fit"),
        None => "no flood fits".to_string(),
    }
}
