//! NTT-friendly prime moduli and the modular arithmetic built on them.

use super::RingError;

/// Largest prime size we accept. Products of two residues stay below 2^120.
pub const MAX_PRIME_BITS: u32 = 60;

/// An odd prime `q ≡ 1 (mod 2N)` together with its negacyclic NTT tables.
#[derive(Clone, Debug)]
pub struct PrimeModulus {
    value: u64,
    bit_len: u32,
    degree: usize,
    psi: u64,
    /// psi^bitrev(i), used by the forward transform.
    pub(crate) fwd: Vec<u64>,
    pub(crate) fwd_shoup: Vec<u64>,
    /// psi^-bitrev(i), used by the inverse transform.
    pub(crate) inv: Vec<u64>,
    pub(crate) inv_shoup: Vec<u64>,
    pub(crate) n_inv: u64,
    pub(crate) n_inv_shoup: u64,
}

impl PartialEq for PrimeModulus {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value && self.degree == other.degree && self.psi == other.psi
    }
}

impl Eq for PrimeModulus {}

impl PrimeModulus {
    /// Builds the modulus for a prime already known to satisfy `q ≡ 1 (mod 2N)`.
    pub fn new(q: u64, degree: usize) -> Result<Self, RingError> {
        if !degree.is_power_of_two() || degree < 2 {
            return Err(RingError::BadDegree(degree));
        }
        let two_n = 2 * degree as u64;
        if q < 3 || q % two_n != 1 || !is_prime(q) || bit_length(q) > MAX_PRIME_BITS {
            return Err(RingError::NotNttFriendly { q, degree });
        }
        let psi = primitive_root_2n(q, degree);
        let psi_inv = inv_mod(psi, q);
        let log_n = degree.trailing_zeros();
        let mut fwd = vec![0u64; degree];
        let mut inv = vec![0u64; degree];
        let (mut p, mut pi) = (1u64, 1u64);
        for i in 0..degree {
            let r = bit_reverse(i, log_n);
            fwd[r] = p;
            inv[r] = pi;
            p = mul_mod(p, psi, q);
            pi = mul_mod(pi, psi_inv, q);
        }
        let fwd_shoup = fwd.iter().map(|&w| shoup(w, q)).collect();
        let inv_shoup = inv.iter().map(|&w| shoup(w, q)).collect();
        let n_inv = inv_mod(degree as u64 % q, q);
        Ok(Self {
            value: q,
            bit_len: bit_length(q),
            degree,
            psi,
            fwd,
            fwd_shoup,
            inv,
            inv_shoup,
            n_inv,
            n_inv_shoup: shoup(n_inv, q),
        })
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bit_len(&self) -> u32 {
        self.bit_len
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Primitive 2N-th root of unity used to twist the transform.
    pub fn psi(&self) -> u64 {
        self.psi
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        mul_mod(a, b, self.value)
    }

    /// Reduces a signed integer into `[0, q)`.
    #[inline]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        let r = x.rem_euclid(self.value as i64);
        r as u64
    }

    /// Reduces an integral `f64` of any magnitude into `[0, q)`.
    pub fn reduce_f64(&self, x: f64) -> u64 {
        debug_assert!(x.is_finite() && x.fract() == 0.0);
        if x.abs() < 9.0e18 {
            return self.reduce_i64(x as i64);
        }
        // x = m * 2^e exactly, with |m| < 2^53 and e > 0.
        let bits = x.abs().to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64 - 1075;
        let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
        let r = self.mul(mant % self.value, pow_mod(2, exp as u64, self.value));
        if x < 0.0 {
            self.neg(r)
        } else {
            r
        }
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }

    pub fn inv(&self, a: u64) -> u64 {
        inv_mod(a, self.value)
    }
}

#[inline]
pub(crate) fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

#[inline]
pub(crate) fn shoup(w: u64, q: u64) -> u64 {
    (((w as u128) << 64) / q as u128) as u64
}

/// `a * w mod q` using the precomputed `w_shoup = floor(w * 2^64 / q)`.
#[inline]
pub(crate) fn mul_shoup(a: u64, w: u64, w_shoup: u64, q: u64) -> u64 {
    let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
    let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(q));
    if r >= q {
        r - q
    } else {
        r
    }
}

pub fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo a prime, via Fermat.
pub(crate) fn inv_mod(a: u64, q: u64) -> u64 {
    pow_mod(a, q - 2, q)
}

pub(crate) fn bit_length(x: u64) -> u32 {
    64 - x.leading_zeros()
}

pub(crate) fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest candidate `x >= 2` whose `(q-1)/2N` power has order exactly 2N.
fn primitive_root_2n(q: u64, degree: usize) -> u64 {
    let two_n = 2 * degree as u64;
    let exp = (q - 1) / two_n;
    (2..q)
        .map(|x| pow_mod(x, exp, q))
        .find(|&y| pow_mod(y, degree as u64, q) == q - 1)
        .expect("a prime q = 1 mod 2N always has a primitive 2N-th root")
}

/// For each requested bit length, the smallest prime of exactly that many bits
/// with `q ≡ 1 (mod 2N)`, skipping primes already chosen earlier in the list.
pub fn find_primes(bit_lens: &[u32], degree: usize) -> Result<Vec<PrimeModulus>, RingError> {
    if !degree.is_power_of_two() || degree < 2 {
        return Err(RingError::BadDegree(degree));
    }
    let two_n = 2 * degree as u64;
    let min_bits = two_n.trailing_zeros() + 1;
    let mut chosen: Vec<u64> = Vec::with_capacity(bit_lens.len());
    for &bits in bit_lens {
        if bits < min_bits || bits > MAX_PRIME_BITS {
            return Err(RingError::BadBitLength { bits, degree });
        }
        let lo = 1u64 << (bits - 1);
        let hi = 1u64 << bits;
        // lo is a multiple of 2N because bits - 1 >= log2(2N).
        let mut q = lo + 1;
        let found = loop {
            if q >= hi {
                break None;
            }
            if !chosen.contains(&q) && is_prime(q) {
                break Some(q);
            }
            q += two_n;
        };
        chosen.push(found.ok_or(RingError::NoSuchPrime { bits, degree })?);
    }
    chosen.into_iter().map(|q| PrimeModulus::new(q, degree)).collect()
}
