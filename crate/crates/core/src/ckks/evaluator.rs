use rand::Rng;

use super::cipher::{Ciphertext, Plaintext};
use super::keys::{galois_element, GaloisKeys};
use super::params::CkksContext;
use super::CkksError;
use crate::ring::{sample, RingError, Sampling, GAUSSIAN_TAIL_CUT};

/// Relative tolerance when comparing scales.
pub const SCALE_RELATIVE_TOLERANCE: f64 = 1.0 / (1u64 << 40) as f64;

/// Largest slot perturbation noise flooding may introduce, at the sampler's
/// tail cut.
pub const FLOOD_SLOT_BUDGET: f64 = 1e-2;

/// Flood width (as log2 multiples of sigma) used when none is configured.
pub const DEFAULT_FLOOD_BITS: u32 = 8;

pub fn scales_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCALE_RELATIVE_TOLERANCE * a.abs().max(b.abs())
}

impl CkksContext {
    fn check_ct(&self, ct: &Ciphertext) -> Result<(), CkksError> {
        self.check_digest(&ct.digest)
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CkksError> {
        self.check_ct(a)?;
        self.check_ct(b)?;
        if a.level() != b.level() {
            return Err(CkksError::LevelMismatch);
        }
        if !scales_match(a.scale, b.scale) {
            return Err(CkksError::ScaleMismatch { left: a.scale, right: b.scale });
        }
        Ok(Ciphertext {
            c0: a.c0.add(&b.c0)?,
            c1: a.c1.add(&b.c1)?,
            scale: a.scale,
            digest: a.digest,
        })
    }

    /// Slotwise product with a plaintext; scales multiply.
    pub fn multiply_plain(&self, ct: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext, CkksError> {
        self.check_ct(ct)?;
        if ct.level() != pt.level() {
            return Err(CkksError::LevelMismatch);
        }
        let m = pt.poly.ntt()?;
        let c0 = ct.c0.ntt()?.mul(&m)?.intt()?;
        let c1 = ct.c1.ntt()?.mul(&m)?.intt()?;
        Ok(Ciphertext { c0, c1, scale: ct.scale * pt.scale, digest: ct.digest })
    }

    /// Left rotation: output slot `i` holds input slot `(i + steps) mod N/2`.
    pub fn rotate_vector(
        &self,
        ct: &Ciphertext,
        steps: usize,
        gk: &GaloisKeys,
    ) -> Result<Ciphertext, CkksError> {
        self.check_ct(ct)?;
        self.check_digest(&gk.digest)?;
        let key = gk.get(steps).ok_or(CkksError::MissingGaloisKey(steps))?;
        debug_assert_eq!(key.element, galois_element(steps, self.params().degree()));
        let c0 = ct.c0.automorphism(key.element)?;
        let c1 = ct.c1.automorphism(key.element)?;
        let (d0, d1) = self.key_switch(&c1, key)?;
        Ok(Ciphertext { c0: c0.add(&d0)?, c1: d1, scale: ct.scale, digest: ct.digest })
    }

    /// Divides by the last active prime and drops it from the chain.
    pub fn rescale_to_next(&self, ct: &Ciphertext) -> Result<Ciphertext, CkksError> {
        self.check_ct(ct)?;
        let rescale = |p: &crate::ring::RingPoly| {
            p.rescale_last().map_err(|e| match e {
                RingError::ChainExhausted => CkksError::ChainExhausted,
                other => other.into(),
            })
        };
        let dropped = self.params().primes()[ct.level()] as f64;
        Ok(Ciphertext {
            c0: rescale(&ct.c0)?,
            c1: rescale(&ct.c1)?,
            scale: ct.scale / dropped,
            digest: ct.digest,
        })
    }

    /// Slot perturbation bound for a flood of width `2^bits · sigma` at `scale`:
    /// tail cut times the standard deviation of one slot's real part.
    pub fn flood_slot_bound(&self, bits: u32, scale: f64) -> f64 {
        let width = 2f64.powi(bits as i32) * self.params().sigma();
        GAUSSIAN_TAIL_CUT * width * (self.params().degree() as f64 / 2.0).sqrt() / scale
    }

    /// Largest flood width the ciphertext's scale can absorb within
    /// [`FLOOD_SLOT_BUDGET`], or `None` if even `bits = 0` is too wide.
    pub fn max_flood_bits(&self, scale: f64) -> Option<u32> {
        (0..63u32).take_while(|&b| self.flood_slot_bound(b, scale) <= FLOOD_SLOT_BUDGET).last()
    }

    /// Adds the trivial encryption `(e, 0)` of zero, `e` Gaussian with standard
    /// deviation `2^flood_bits · sigma`.
    pub fn noise_flood<R: Rng + ?Sized>(
        &self,
        ct: &Ciphertext,
        flood_bits: u32,
        rng: &mut R,
    ) -> Result<Ciphertext, CkksError> {
        self.check_ct(ct)?;
        if flood_bits > 62 || self.flood_slot_bound(flood_bits, ct.scale) > FLOOD_SLOT_BUDGET {
            return Err(CkksError::FloodOverflow {
                bits: flood_bits,
                max_bits: self.max_flood_bits(ct.scale),
            });
        }
        let width = 2f64.powi(flood_bits as i32) * self.params().sigma();
        let e = sample(self.ring(), ct.level(), Sampling::Gaussian(width), rng);
        Ok(Ciphertext { c0: ct.c0.add(&e)?, c1: ct.c1.clone(), scale: ct.scale, digest: ct.digest })
    }
}
