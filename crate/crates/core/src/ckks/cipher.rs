use rand::Rng;

use super::params::{CkksContext, ParamsDigest};
use super::CkksError;
use crate::ring::{sample, Domain, RingPoly, Sampling};

/// Largest slot magnitude the encoder accepts.
pub const MAX_SLOT_MAGNITUDE: f64 = (1u64 << 20) as f64;
/// Bits of modulus that must remain above `scale · max|v|` when encoding.
pub const ENCODE_HEADROOM_BITS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub(crate) poly: RingPoly,
    pub(crate) scale: f64,
}

impl Plaintext {
    pub fn poly(&self) -> &RingPoly {
        &self.poly
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn level(&self) -> usize {
        self.poly.level()
    }
}

/// `(c0, c1)` in coefficient form, decrypting as `c0 + c1·s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub(crate) c0: RingPoly,
    pub(crate) c1: RingPoly,
    pub(crate) scale: f64,
    pub(crate) digest: ParamsDigest,
}

impl Ciphertext {
    /// Assembles a ciphertext from parts, e.g. after deserialization.
    pub fn from_parts(
        ctx: &CkksContext,
        c0: RingPoly,
        c1: RingPoly,
        scale: f64,
    ) -> Result<Self, CkksError> {
        if c0.domain() != Domain::Coeff
            || c1.domain() != Domain::Coeff
            || c0.level() != c1.level()
            || !ctx.ring().same_ring(c0.context())
            || !ctx.ring().same_ring(c1.context())
        {
            return Err(CkksError::ParamMismatch);
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(CkksError::BadParams(format!("scale {scale} must be positive")));
        }
        Ok(Self { c0, c1, scale, digest: *ctx.digest() })
    }

    pub fn c0(&self) -> &RingPoly {
        &self.c0
    }

    pub fn c1(&self) -> &RingPoly {
        &self.c1
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn level(&self) -> usize {
        self.c0.level()
    }

    pub fn digest(&self) -> &ParamsDigest {
        &self.digest
    }
}

/// Ternary secret `s`, kept in both representations.
#[derive(Clone, Debug)]
pub struct SecretKey {
    pub(crate) s: RingPoly,
    pub(crate) s_eval: RingPoly,
    pub(crate) digest: ParamsDigest,
}

impl SecretKey {
    /// Centered coefficients of `s`, each in {-1, 0, 1}.
    pub fn coefficients(&self) -> Vec<i64> {
        let m = &self.s.context().moduli()[0];
        self.s.limb(0).iter().map(|&c| m.center(c)).collect()
    }

    pub fn poly(&self) -> &RingPoly {
        &self.s
    }

    pub(crate) fn eval_at(&self, level: usize) -> RingPoly {
        self.s_eval.truncate_to(level).expect("key lives at the top level")
    }
}

impl CkksContext {
    /// Encodes up to `N/2` reals at `scale` over primes `0..=level`.
    pub fn encode(&self, values: &[f64], scale: f64, level: usize) -> Result<Plaintext, CkksError> {
        let slots = self.params().slot_count();
        if values.len() > slots {
            return Err(CkksError::TooManyValues { got: values.len(), max: slots });
        }
        if level > self.params().max_level() {
            return Err(CkksError::LevelMismatch);
        }
        if !(scale.is_finite() && scale >= 1.0) {
            return Err(CkksError::BadParams(format!("scale {scale} must be at least 1")));
        }
        let max_abs = values.iter().fold(0f64, |m, v| m.max(v.abs()));
        if !max_abs.is_finite() || max_abs > MAX_SLOT_MAGNITUDE {
            return Err(CkksError::ScaleOverflow { needed_bits: f64::INFINITY, available_bits: 0.0 });
        }
        let available = self.ring().log2_modulus(level);
        if max_abs > 0.0 {
            let needed = (scale * max_abs).log2() + ENCODE_HEADROOM_BITS;
            if needed > available {
                return Err(CkksError::ScaleOverflow { needed_bits: needed, available_bits: available });
            }
        }
        let coeffs = self.encoder().embed_inverse(values, scale);
        let limbs = self.ring().moduli()[..=level]
            .iter()
            .map(|m| coeffs.iter().map(|c| m.reduce_f64(c.round())).collect())
            .collect();
        let poly = RingPoly::from_limbs(self.ring(), limbs, Domain::Coeff)?;
        Ok(Plaintext { poly, scale })
    }

    /// Encodes at the default scale and the top level.
    pub fn encode_default(&self, values: &[f64]) -> Result<Plaintext, CkksError> {
        self.encode(values, self.params().default_scale(), self.params().max_level())
    }

    /// All `N/2` slot values divided by the plaintext scale.
    pub fn decode(&self, pt: &Plaintext) -> Vec<f64> {
        let poly = pt.poly.clone().into_domain(Domain::Coeff);
        let coeffs: Vec<f64> = (0..poly.degree()).map(|k| poly.coeff_f64(k) / pt.scale).collect();
        self.encoder().embed(&coeffs)
    }

    pub fn keygen<R: Rng + ?Sized>(&self, rng: &mut R) -> SecretKey {
        let s = sample(self.ring(), self.params().max_level(), Sampling::Ternary, rng);
        let s_eval = s.ntt().expect("fresh sample is in coefficient form");
        SecretKey { s, s_eval, digest: *self.digest() }
    }

    /// `c1 ← uniform`, `c0 = -c1·s + m + e`.
    pub fn encrypt_symmetric<R: Rng + ?Sized>(
        &self,
        pt: &Plaintext,
        sk: &SecretKey,
        rng: &mut R,
    ) -> Result<Ciphertext, CkksError> {
        self.check_digest(&sk.digest)?;
        let level = pt.level();
        let c1 = sample(self.ring(), level, Sampling::Uniform, rng);
        let e = sample(self.ring(), level, Sampling::Gaussian(self.params().sigma()), rng);
        let c1s = c1.ntt()?.mul(&sk.eval_at(level))?.intt()?;
        let c0 = pt.poly.sub(&c1s)?.add(&e)?;
        Ok(Ciphertext { c0, c1, scale: pt.scale, digest: *self.digest() })
    }

    pub fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext, CkksError> {
        self.check_digest(&ct.digest)?;
        self.check_digest(&sk.digest)?;
        let c1s = ct.c1.ntt()?.mul(&sk.eval_at(ct.level()))?.intt()?;
        let poly = ct.c0.add(&c1s)?;
        Ok(Plaintext { poly, scale: ct.scale })
    }

    /// `log2 max_k |Dec(ct)_k − reference_k|` over centered coefficients;
    /// `-inf` when they agree exactly.
    pub fn estimate_noise(
        &self,
        ct: &Ciphertext,
        sk: &SecretKey,
        reference: &Plaintext,
    ) -> Result<f64, CkksError> {
        let dec = self.decrypt(ct, sk)?;
        let reference = reference.poly.truncate_to(ct.level()).map_err(|_| CkksError::LevelMismatch)?;
        let diff = dec.poly.sub(&reference)?;
        let max = (0..diff.degree()).map(|k| diff.coeff_f64(k).abs()).fold(0f64, f64::max);
        Ok(if max == 0.0 { f64::NEG_INFINITY } else { max.log2() })
    }
}
