//! Galois (rotation) keys with BV-style digit decomposition.
//!
//! The gadget for limb `i`, digit `t` is `2^{t·b}` on limb `i` and zero on every
//! other limb, so `Σ_{i,t} digit_{i,t}(c) · gadget_{i,t} ≡ c (mod Q)`. Keys made
//! at the top level therefore still work after dropping trailing primes.

use std::collections::BTreeMap;

use rand::Rng;

use super::params::{CkksContext, ParamsDigest};
use super::{CkksError, SecretKey};
use crate::ring::{pow_mod_usize, sample, Domain, PrimeModulus, RingPoly, Sampling};

/// Galois element for a left rotation by `step` slots: `3^step mod 2N`.
pub fn galois_element(step: usize, degree: usize) -> usize {
    pow_mod_usize(3, step, 2 * degree)
}

/// Key-switching key from `s(X^g)` to `s`. Parts are stored in evaluation form,
/// ordered limb-major then digit-minor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaloisKey {
    pub(crate) step: usize,
    pub(crate) element: usize,
    pub(crate) digits: Vec<usize>,
    pub(crate) parts: Vec<(RingPoly, RingPoly)>,
}

impl GaloisKey {
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn element(&self) -> usize {
        self.element
    }

    /// Number of decomposition digits for each prime.
    pub fn digits_per_limb(&self) -> &[usize] {
        &self.digits
    }

    pub fn parts(&self) -> &[(RingPoly, RingPoly)] {
        &self.parts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaloisKeys {
    pub(crate) keys: BTreeMap<usize, GaloisKey>,
    pub(crate) digest: ParamsDigest,
}

impl GaloisKeys {
    pub fn steps(&self) -> Vec<usize> {
        self.keys.keys().copied().collect()
    }

    pub fn get(&self, step: usize) -> Option<&GaloisKey> {
        self.keys.get(&step)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn digest(&self) -> &ParamsDigest {
        &self.digest
    }

    pub fn iter(&self) -> impl Iterator<Item = &GaloisKey> {
        self.keys.values()
    }
}

pub(crate) fn digits_for(ctx: &CkksContext) -> Vec<usize> {
    let b = ctx.params().ks_base_log() as usize;
    ctx.ring().moduli().iter().map(|m| (m.bit_len() as usize).div_ceil(b)).collect()
}

impl CkksContext {
    pub fn galois_keygen<R: Rng + ?Sized>(
        &self,
        sk: &SecretKey,
        steps: &[usize],
        rng: &mut R,
    ) -> Result<GaloisKeys, CkksError> {
        self.check_digest(&sk.digest)?;
        let slots = self.params().slot_count();
        if let Some(&bad) = steps.iter().find(|&&r| r == 0 || r >= slots) {
            return Err(CkksError::BadStep(bad));
        }
        let mut keys = BTreeMap::new();
        for &step in steps {
            if keys.contains_key(&step) {
                continue;
            }
            keys.insert(step, self.make_switching_key(sk, step, rng)?);
        }
        Ok(GaloisKeys { keys, digest: *self.digest() })
    }

    fn make_switching_key<R: Rng + ?Sized>(
        &self,
        sk: &SecretKey,
        step: usize,
        rng: &mut R,
    ) -> Result<GaloisKey, CkksError> {
        let level = self.params().max_level();
        let element = galois_element(step, self.params().degree());
        let rotated = sk.s.automorphism(element)?.ntt()?;
        let digits = digits_for(self);
        let b = self.params().ks_base_log() as u64;
        let moduli = self.ring().moduli();
        let mut parts = Vec::new();
        for (i, &count) in digits.iter().enumerate() {
            let m = &moduli[i];
            for t in 0..count as u64 {
                let a = sample(self.ring(), level, Sampling::Uniform, rng).into_domain(Domain::Eval);
                let e = sample(self.ring(), level, Sampling::Gaussian(self.params().sigma()), rng)
                    .into_domain(Domain::Eval);
                let mut b_part = e.sub(&a.mul(&sk.s_eval)?)?;
                let factor = crate::ring::pow_mod_u64(2, t * b, m.value());
                let mut limbs = b_part.limbs().to_vec();
                for (dst, &sv) in limbs[i].iter_mut().zip(rotated.limb(i)) {
                    *dst = m.add(*dst, m.mul(sv, factor));
                }
                b_part = RingPoly::from_limbs(self.ring(), limbs, Domain::Eval)?;
                parts.push((b_part, a));
            }
        }
        Ok(GaloisKey { step, element, digits, parts })
    }

    /// Switches `c` (a coefficient-domain component under `s(X^g)`) to a pair
    /// `(d0, d1)` under `s` with `d0 + d1·s ≈ c·s(X^g)`.
    pub(crate) fn key_switch(&self, c: &RingPoly, key: &GaloisKey) -> Result<(RingPoly, RingPoly), CkksError> {
        let level = c.level();
        let b = self.params().ks_base_log();
        let moduli = self.ring().moduli();
        let mut acc0 = RingPoly::zero(self.ring(), level, Domain::Eval);
        let mut acc1 = RingPoly::zero(self.ring(), level, Domain::Eval);
        let mut part = 0;
        for (i, &count) in key.digits.iter().enumerate() {
            if i > level {
                break;
            }
            let digits = balanced_digits(c.limb(i), &moduli[i], b, count);
            for digit in &digits {
                let d = RingPoly::from_signed(self.ring(), level, digit).ntt()?;
                let (k0, k1) = &key.parts[part];
                acc0 = acc0.add(&d.mul(&k0.truncate_to(level)?)?)?;
                acc1 = acc1.add(&d.mul(&k1.truncate_to(level)?)?)?;
                part += 1;
            }
        }
        Ok((acc0.intt()?, acc1.intt()?))
    }
}

/// Signed base-`2^b` digits of the centered residues, each in `[-2^{b-1}, 2^{b-1})`
/// except the last, which absorbs the final carry. Zero-mean digits keep the
/// key-switch error from piling up in the low-frequency slots.
fn balanced_digits(limb: &[u64], m: &PrimeModulus, b: u32, count: usize) -> Vec<Vec<i64>> {
    let base = 1i64 << b;
    let half = base / 2;
    let mut out = vec![vec![0i64; limb.len()]; count];
    for (k, &x) in limb.iter().enumerate() {
        let mut v = m.center(x);
        for (t, digits) in out.iter_mut().enumerate() {
            if t + 1 == count {
                digits[k] = v;
                break;
            }
            let mut d = v.rem_euclid(base);
            if d >= half {
                d -= base;
            }
            digits[k] = d;
            v = (v - d) >> b;
        }
    }
    out
}
