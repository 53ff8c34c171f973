use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::encoding::Encoder;
use super::CkksError;
use crate::ring::RingContext;

/// Polynomial degree of the demo parameter set.
pub const DEMO_DEGREE: usize = 4096;
/// Prime sizes of the demo modulus chain.
pub const DEMO_PRIME_BITS: [u32; 3] = [37, 37, 35];
/// log2 of the demo encoding scale.
pub const DEMO_SCALE_LOG2: i32 = 20;
pub const DEFAULT_SIGMA: f64 = 3.2;
pub const DEFAULT_KS_BASE_LOG: u32 = 8;

/// Largest total modulus size (bits) considered 128-bit secure for ternary
/// secrets, by ring degree.
pub const SECURITY_TABLE: [(usize, u32); 5] =
    [(1024, 27), (2048, 54), (4096, 109), (8192, 218), (16384, 438)];

pub type ParamsDigest = [u8; 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecurityLevel {
    /// Total modulus within the 128-bit table entry for this degree.
    Standard,
    /// Above the table entry, or a degree the table does not cover.
    Reduced,
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecurityLevel::Standard => "standard",
            SecurityLevel::Reduced => "reduced",
        })
    }
}

/// Public scheme parameters. The digest pins every other field.
#[derive(Clone, Debug, PartialEq)]
pub struct CkksParams {
    degree: usize,
    prime_bit_lens: Vec<u32>,
    primes: Vec<u64>,
    default_scale: f64,
    sigma: f64,
    ks_base_log: u32,
    digest: ParamsDigest,
}

impl CkksParams {
    pub fn new(
        degree: usize,
        prime_bit_lens: &[u32],
        scale_log2: i32,
        sigma: f64,
        ks_base_log: u32,
    ) -> Result<Self, CkksError> {
        if prime_bit_lens.is_empty() {
            return Err(CkksError::BadParams("empty modulus chain".into()));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(CkksError::BadParams(format!("sigma {sigma} must be positive")));
        }
        if !(1..=30).contains(&ks_base_log) {
            return Err(CkksError::BadParams(format!("ks_base_log {ks_base_log} outside 1..=30")));
        }
        if !(1..=62).contains(&scale_log2) {
            return Err(CkksError::BadParams(format!("scale exponent {scale_log2} outside 1..=62")));
        }
        let primes = crate::ring::find_primes(prime_bit_lens, degree)?
            .iter()
            .map(|p| p.value())
            .collect();
        let mut params = Self {
            degree,
            prime_bit_lens: prime_bit_lens.to_vec(),
            primes,
            default_scale: 2f64.powi(scale_log2),
            sigma,
            ks_base_log,
            digest: [0; 32],
        };
        params.digest = Sha256::digest(params.canonical_bytes()).into();
        Ok(params)
    }

    /// N = 4096, primes {37, 37, 35} bits, scale 2^20.
    pub fn demo() -> Self {
        Self::new(DEMO_DEGREE, &DEMO_PRIME_BITS, DEMO_SCALE_LOG2, DEFAULT_SIGMA, DEFAULT_KS_BASE_LOG)
            .expect("demo parameters are valid")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn slot_count(&self) -> usize {
        self.degree / 2
    }

    pub fn prime_bit_lens(&self) -> &[u32] {
        &self.prime_bit_lens
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn max_level(&self) -> usize {
        self.primes.len() - 1
    }

    pub fn default_scale(&self) -> f64 {
        self.default_scale
    }

    /// `log2(default_scale)`; exact because the scale is a power of two.
    pub fn scale_log2(&self) -> i32 {
        self.default_scale.log2() as i32
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ks_base_log(&self) -> u32 {
        self.ks_base_log
    }

    pub fn digest(&self) -> &ParamsDigest {
        &self.digest
    }

    pub fn total_modulus_bits(&self) -> u32 {
        self.prime_bit_lens.iter().sum()
    }

    pub fn security_level(&self) -> SecurityLevel {
        match SECURITY_TABLE.iter().find(|(n, _)| *n == self.degree) {
            Some(&(_, max_bits)) if self.total_modulus_bits() <= max_bits => SecurityLevel::Standard,
            _ => SecurityLevel::Reduced,
        }
    }

    /// Canonical byte form; hashed for the digest and used as the params
    /// envelope payload.
    ///
    /// Layout (all little-endian): degree u64, count u32, bit lengths u32 each,
    /// primes u64 each, scale (mantissa u64, exponent i32), sigma (same),
    /// ks_base_log u32.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 12 * self.primes.len());
        out.extend_from_slice(&(self.degree as u64).to_le_bytes());
        out.extend_from_slice(&(self.primes.len() as u32).to_le_bytes());
        for b in &self.prime_bit_lens {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for q in &self.primes {
            out.extend_from_slice(&q.to_le_bytes());
        }
        for x in [self.default_scale, self.sigma] {
            let (m, e) = split_real(x);
            out.extend_from_slice(&m.to_le_bytes());
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.extend_from_slice(&self.ks_base_log.to_le_bytes());
        out
    }

    /// Inverse of [`canonical_bytes`](Self::canonical_bytes). Primes are
    /// re-derived and must match the recorded ones.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, CkksError> {
        let mut r = ByteReader(bytes);
        let degree = r.u64()? as usize;
        let count = r.u32()? as usize;
        if count == 0 || count > 64 {
            return Err(CkksError::BadParams(format!("{count} primes")));
        }
        let bits: Vec<u32> = (0..count).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let primes: Vec<u64> = (0..count).map(|_| r.u64()).collect::<Result<_, _>>()?;
        let scale = join_real(r.u64()?, r.i32()?);
        let sigma = join_real(r.u64()?, r.i32()?);
        let ks_base_log = r.u32()?;
        if !r.0.is_empty() {
            return Err(CkksError::BadParams("trailing bytes".into()));
        }
        let scale_log2 = scale.log2();
        if scale_log2.fract() != 0.0 {
            return Err(CkksError::BadParams("scale is not a power of two".into()));
        }
        let params = Self::new(degree, &bits, scale_log2 as i32, sigma, ks_base_log)?;
        if params.primes != primes {
            return Err(CkksError::BadParams("recorded primes differ from derived chain".into()));
        }
        Ok(params)
    }
}

/// Splits a finite non-negative float into `(mantissa, exponent)` with
/// `x = mantissa · 2^exponent` exactly and `mantissa` odd (or zero).
pub fn split_real(x: f64) -> (u64, i32) {
    assert!(x.is_finite() && x >= 0.0, "only finite non-negative reals are split");
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut mant, mut exp) = if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), raw_exp - 1075)
    };
    let tz = mant.trailing_zeros();
    mant >>= tz;
    exp += tz as i32;
    (mant, exp)
}

pub fn join_real(mantissa: u64, exponent: i32) -> f64 {
    mantissa as f64 * 2f64.powi(exponent)
}

struct ByteReader<'a>(&'a [u8]);

impl ByteReader<'_> {
    fn take<const K: usize>(&mut self) -> Result<[u8; K], CkksError> {
        if self.0.len() < K {
            return Err(CkksError::BadParams("truncated parameter bytes".into()));
        }
        let (head, tail) = self.0.split_at(K);
        self.0 = tail;
        Ok(head.try_into().expect("length checked"))
    }
    fn u64(&mut self) -> Result<u64, CkksError> {
        self.take::<8>().map(u64::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32, CkksError> {
        self.take::<4>().map(u32::from_le_bytes)
    }
    fn i32(&mut self) -> Result<i32, CkksError> {
        self.take::<4>().map(i32::from_le_bytes)
    }
}

/// Parameters plus everything derived from them: ring tables and encoder.
pub struct CkksContext {
    params: CkksParams,
    ring: Arc<RingContext>,
    encoder: Encoder,
}

impl fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CkksContext").field("params", &self.params).finish_non_exhaustive()
    }
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Arc<Self>, CkksError> {
        let moduli = params
            .primes
            .iter()
            .map(|&q| crate::ring::PrimeModulus::new(q, params.degree))
            .collect::<Result<Vec<_>, _>>()?;
        let ring = RingContext::new(params.degree, moduli)?;
        let encoder = Encoder::new(params.degree);
        Ok(Arc::new(Self { params, ring, encoder }))
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn ring(&self) -> &Arc<RingContext> {
        &self.ring
    }

    pub(crate) fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn digest(&self) -> &ParamsDigest {
        self.params.digest()
    }

    pub(crate) fn check_digest(&self, digest: &ParamsDigest) -> Result<(), CkksError> {
        if digest != self.params.digest() {
            return Err(CkksError::ParamMismatch);
        }
        Ok(())
    }
}
