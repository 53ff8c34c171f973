//! Arithmetic in `Z_Q[X]/(X^N + 1)` with `Q` a product of NTT-friendly primes,
//! stored in residue-number-system form.

mod modulus;
mod ntt;
mod poly;
mod sample;

use std::sync::Arc;

pub use modulus::{find_primes, is_prime, PrimeModulus, MAX_PRIME_BITS};
pub use modulus::pow_mod as pow_mod_u64;
pub use poly::{Domain, RingPoly};
pub use sample::{sample, sample_signed, Sampling, GAUSSIAN_TAIL_CUT};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("no {bits}-bit prime congruent to 1 mod {}", 2 * degree)]
    NoSuchPrime { bits: u32, degree: usize },
    #[error("bit length {bits} unusable at degree {degree}")]
    BadBitLength { bits: u32, degree: usize },
    #[error("ring degree {0} is not a power of two")]
    BadDegree(usize),
    #[error("{q} is not an NTT-friendly prime for degree {degree}")]
    NotNttFriendly { q: u64, degree: usize },
    #[error("polynomial domain mismatch: expected {expected:?}, found {found:?}")]
    DomainMismatch { expected: Domain, found: Domain },
    #[error("polynomials live in different rings or at different levels")]
    ParamMismatch,
    #[error("galois element {0} is not a unit mod 2N")]
    BadGaloisElement(usize),
    #[error("modulus chain exhausted")]
    ChainExhausted,
}

/// `base^exp mod m` for small moduli such as `2N`.
pub fn pow_mod_usize(base: usize, exp: usize, m: usize) -> usize {
    pow_mod_u64(base as u64, exp as u64, m as u64) as usize
}

/// The shared description of a ring: its degree and the full prime chain.
///
/// Polynomials reference a prefix `q_0..q_l` of the chain; `l` is their level.
#[derive(Debug)]
pub struct RingContext {
    degree: usize,
    moduli: Vec<PrimeModulus>,
    crt: Garner,
}

/// Per-prefix constants for mixed-radix reconstruction.
#[derive(Debug)]
struct Garner {
    /// `prefix_mod[i][j] = (q_0 * ... * q_{j-1}) mod q_i` for `j < i`.
    prefix_mod: Vec<Vec<u64>>,
    /// `inv[i] = (q_0 * ... * q_{i-1})^-1 mod q_i`.
    inv: Vec<u64>,
    /// `q_0 * ... * q_{i-1}` as a float.
    radix: Vec<f64>,
}

impl RingContext {
    pub fn new(degree: usize, moduli: Vec<PrimeModulus>) -> Result<Arc<Self>, RingError> {
        if !degree.is_power_of_two() || degree < 2 {
            return Err(RingError::BadDegree(degree));
        }
        if moduli.is_empty() || moduli.iter().any(|m| m.degree() != degree) {
            return Err(RingError::ParamMismatch);
        }
        let count = moduli.len();
        let mut prefix_mod = vec![Vec::new(); count];
        let mut inv = vec![1u64; count];
        let mut radix = vec![1f64; count];
        for i in 0..count {
            let qi = &moduli[i];
            let mut acc = 1u64;
            for j in 0..i {
                prefix_mod[i].push(acc);
                acc = qi.mul(acc, moduli[j].value() % qi.value());
            }
            inv[i] = qi.inv(acc);
            if i > 0 {
                radix[i] = radix[i - 1] * moduli[i - 1].value() as f64;
            }
        }
        Ok(Arc::new(Self {
            degree,
            moduli,
            crt: Garner { prefix_mod, inv, radix },
        }))
    }

    /// Convenience constructor running [`find_primes`].
    pub fn with_bit_lens(degree: usize, bit_lens: &[u32]) -> Result<Arc<Self>, RingError> {
        Self::new(degree, find_primes(bit_lens, degree)?)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn moduli(&self) -> &[PrimeModulus] {
        &self.moduli
    }

    pub fn max_level(&self) -> usize {
        self.moduli.len() - 1
    }

    /// log2 of `q_0 * ... * q_level`.
    pub fn log2_modulus(&self, level: usize) -> f64 {
        self.moduli[..=level]
            .iter()
            .map(|m| (m.value() as f64).log2())
            .sum()
    }

    /// Centered integer value (as `f64`) of residues `r[0..=level]`.
    ///
    /// Balanced mixed-radix digits `v_i` in `(-q_i/2, q_i/2]` give
    /// `x = Σ v_i · q_0…q_{i-1}`, which is exactly the representative of
    /// smallest magnitude.
    pub fn centered_f64(&self, residues: &[u64]) -> f64 {
        let g = &self.crt;
        let mut digits: Vec<i64> = Vec::with_capacity(residues.len());
        let mut acc = 0f64;
        for (i, &r) in residues.iter().enumerate() {
            let qi = &self.moduli[i];
            let mut partial = 0u64;
            for (j, &d) in digits.iter().enumerate() {
                partial = qi.add(partial, qi.mul(qi.reduce_i64(d), g.prefix_mod[i][j]));
            }
            let digit = qi.center(qi.mul(qi.sub(r, partial), g.inv[i]));
            acc += digit as f64 * g.radix[i];
            digits.push(digit);
        }
        acc
    }

    pub(crate) fn same_ring(&self, other: &Self) -> bool {
        std::ptr::eq(self, other) || (self.degree == other.degree && self.moduli == other.moduli)
    }
}
