use std::sync::Arc;

use super::{ntt, RingContext, RingError};

/// Representation of a polynomial's limbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Coefficients of `X^0..X^{N-1}`.
    Coeff,
    /// Evaluations at the odd powers of psi (bit-reversed order).
    Eval,
}

/// An element of `Z_{q_0…q_l}[X]/(X^N + 1)`; one limb per active prime.
#[derive(Clone, Debug)]
pub struct RingPoly {
    ctx: Arc<RingContext>,
    limbs: Vec<Vec<u64>>,
    domain: Domain,
}

impl PartialEq for RingPoly {
    fn eq(&self, other: &Self) -> bool {
        self.ctx.same_ring(&other.ctx) && self.domain == other.domain && self.limbs == other.limbs
    }
}

impl Eq for RingPoly {}

impl RingPoly {
    pub fn zero(ctx: &Arc<RingContext>, level: usize, domain: Domain) -> Self {
        assert!(level <= ctx.max_level(), "level {level} beyond chain");
        Self {
            ctx: ctx.clone(),
            limbs: vec![vec![0; ctx.degree()]; level + 1],
            domain,
        }
    }

    /// Coefficient-domain polynomial from small signed coefficients.
    pub fn from_signed(ctx: &Arc<RingContext>, level: usize, coeffs: &[i64]) -> Self {
        assert_eq!(coeffs.len(), ctx.degree());
        let limbs = ctx.moduli()[..=level]
            .iter()
            .map(|m| coeffs.iter().map(|&c| m.reduce_i64(c)).collect())
            .collect();
        Self { ctx: ctx.clone(), limbs, domain: Domain::Coeff }
    }

    /// Wraps raw limbs, checking shape and reduction.
    pub fn from_limbs(
        ctx: &Arc<RingContext>,
        limbs: Vec<Vec<u64>>,
        domain: Domain,
    ) -> Result<Self, RingError> {
        if limbs.is_empty() || limbs.len() > ctx.moduli().len() {
            return Err(RingError::ParamMismatch);
        }
        for (limb, m) in limbs.iter().zip(ctx.moduli()) {
            if limb.len() != ctx.degree() || limb.iter().any(|&c| c >= m.value()) {
                return Err(RingError::ParamMismatch);
            }
        }
        Ok(Self { ctx: ctx.clone(), limbs, domain })
    }

    pub fn context(&self) -> &Arc<RingContext> {
        &self.ctx
    }

    pub fn degree(&self) -> usize {
        self.ctx.degree()
    }

    pub fn level(&self) -> usize {
        self.limbs.len() - 1
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn limbs(&self) -> &[Vec<u64>] {
        &self.limbs
    }

    pub fn limb(&self, i: usize) -> &[u64] {
        &self.limbs[i]
    }

    /// Residues of coefficient `k` across the active primes.
    pub fn residues(&self, k: usize) -> Vec<u64> {
        self.limbs.iter().map(|l| l[k]).collect()
    }

    /// Centered integer value of coefficient `k` as a float.
    pub fn coeff_f64(&self, k: usize) -> f64 {
        debug_assert_eq!(self.domain, Domain::Coeff);
        self.ctx.centered_f64(&self.residues(k))
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|l| l.iter().all(|&c| c == 0))
    }

    fn expect_domain(&self, expected: Domain) -> Result<(), RingError> {
        if self.domain != expected {
            return Err(RingError::DomainMismatch { expected, found: self.domain });
        }
        Ok(())
    }

    fn check_compatible(&self, other: &Self) -> Result<(), RingError> {
        if !self.ctx.same_ring(&other.ctx) || self.limbs.len() != other.limbs.len() {
            return Err(RingError::ParamMismatch);
        }
        other.expect_domain(self.domain)
    }

    pub fn ntt(&self) -> Result<Self, RingError> {
        self.expect_domain(Domain::Coeff)?;
        let mut out = self.clone();
        for (limb, m) in out.limbs.iter_mut().zip(self.ctx.moduli()) {
            ntt::forward(limb, m);
        }
        out.domain = Domain::Eval;
        Ok(out)
    }

    pub fn intt(&self) -> Result<Self, RingError> {
        self.expect_domain(Domain::Eval)?;
        let mut out = self.clone();
        for (limb, m) in out.limbs.iter_mut().zip(self.ctx.moduli()) {
            ntt::inverse(limb, m);
        }
        out.domain = Domain::Coeff;
        Ok(out)
    }

    /// Converts to `domain`, transforming only if needed.
    pub fn into_domain(self, domain: Domain) -> Self {
        match (self.domain, domain) {
            (Domain::Coeff, Domain::Eval) => self.ntt().expect("domain checked"),
            (Domain::Eval, Domain::Coeff) => self.intt().expect("domain checked"),
            _ => self,
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&super::PrimeModulus, u64, u64) -> u64) -> Result<Self, RingError> {
        self.check_compatible(other)?;
        let limbs = self
            .limbs
            .iter()
            .zip(&other.limbs)
            .zip(self.ctx.moduli())
            .map(|((a, b), m)| a.iter().zip(b).map(|(&x, &y)| f(m, x, y)).collect())
            .collect();
        Ok(Self { ctx: self.ctx.clone(), limbs, domain: self.domain })
    }

    pub fn add(&self, other: &Self) -> Result<Self, RingError> {
        self.zip_with(other, |m, a, b| m.add(a, b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, RingError> {
        self.zip_with(other, |m, a, b| m.sub(a, b))
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for (limb, m) in out.limbs.iter_mut().zip(self.ctx.moduli()) {
            limb.iter_mut().for_each(|c| *c = m.neg(*c));
        }
        out
    }

    /// Negacyclic product. Evaluation-domain inputs multiply pointwise;
    /// coefficient-domain inputs are transformed and the result returned in
    /// coefficient form.
    pub fn mul(&self, other: &Self) -> Result<Self, RingError> {
        match self.domain {
            Domain::Eval => self.zip_with(other, |m, a, b| m.mul(a, b)),
            Domain::Coeff => {
                self.check_compatible(other)?;
                self.ntt()?.mul(&other.ntt()?)?.intt()
            }
        }
    }

    /// Multiplies limb `i` by `scalars[i]`.
    pub fn mul_scalar_rns(&self, scalars: &[u64]) -> Self {
        let mut out = self.clone();
        for ((limb, m), &s) in out.limbs.iter_mut().zip(self.ctx.moduli()).zip(scalars) {
            limb.iter_mut().for_each(|c| *c = m.mul(*c, s));
        }
        out
    }

    /// `X -> X^g`. The coefficient of `X^j` lands on `X^{g·j mod 2N}`, negated
    /// when that exponent wraps past `N`.
    pub fn automorphism(&self, g: usize) -> Result<Self, RingError> {
        self.expect_domain(Domain::Coeff)?;
        let n = self.degree();
        let two_n = 2 * n;
        if g % 2 == 0 || g >= two_n {
            return Err(RingError::BadGaloisElement(g));
        }
        let mut out = Self::zero(&self.ctx, self.level(), Domain::Coeff);
        for ((src, dst), m) in self.limbs.iter().zip(out.limbs.iter_mut()).zip(self.ctx.moduli()) {
            let mut idx = 0usize;
            for &c in src.iter() {
                if idx < n {
                    dst[idx] = c;
                } else {
                    dst[idx - n] = m.neg(c);
                }
                idx += g;
                if idx >= two_n {
                    idx -= two_n;
                }
            }
        }
        Ok(out)
    }

    /// Keeps only the first `level + 1` limbs.
    pub fn truncate_to(&self, level: usize) -> Result<Self, RingError> {
        if level > self.level() {
            return Err(RingError::ParamMismatch);
        }
        let mut out = self.clone();
        out.limbs.truncate(level + 1);
        Ok(out)
    }

    /// Divides by the last active prime with rounding and drops it.
    ///
    /// With `v` the centered lift of the last limb, each surviving limb becomes
    /// `(c_i - v) · q_L^{-1} mod q_i`, the RNS form of `round(c / q_L)`.
    pub fn rescale_last(&self) -> Result<Self, RingError> {
        self.expect_domain(Domain::Coeff)?;
        if self.limbs.len() < 2 {
            return Err(RingError::ChainExhausted);
        }
        let last = self.level();
        let moduli = self.ctx.moduli();
        let q_last = &moduli[last];
        let top = &self.limbs[last];
        let mut limbs = Vec::with_capacity(last);
        for (limb, m) in self.limbs[..last].iter().zip(moduli) {
            let inv = m.inv(q_last.value() % m.value());
            limbs.push(
                limb.iter()
                    .zip(top)
                    .map(|(&c, &t)| {
                        let v = m.reduce_i64(q_last.center(t));
                        m.mul(m.sub(c, v), inv)
                    })
                    .collect(),
            );
        }
        Ok(Self { ctx: self.ctx.clone(), limbs, domain: Domain::Coeff })
    }
}
