//! Negacyclic number-theoretic transform.
//!
//! Forward is Cooley-Tukey with psi-twisted twiddles producing bit-reversed
//! output; inverse is Gentleman-Sande consuming bit-reversed input. Evaluation
//! order only matters for pointwise products, so it is never un-permuted.

use super::modulus::{mul_shoup, PrimeModulus};

pub(crate) fn forward(a: &mut [u64], m: &PrimeModulus) {
    let n = a.len();
    debug_assert_eq!(n, m.degree());
    let q = m.value();
    let mut t = n;
    let mut groups = 1;
    while groups < n {
        t >>= 1;
        for i in 0..groups {
            let w = m.fwd[groups + i];
            let ws = m.fwd_shoup[groups + i];
            let start = 2 * i * t;
            let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let u = *x;
                let v = mul_shoup(*y, w, ws, q);
                *x = m.add(u, v);
                *y = m.sub(u, v);
            }
        }
        groups <<= 1;
    }
}

pub(crate) fn inverse(a: &mut [u64], m: &PrimeModulus) {
    let n = a.len();
    debug_assert_eq!(n, m.degree());
    let q = m.value();
    let mut t = 1;
    let mut groups = n;
    while groups > 1 {
        let half = groups >> 1;
        for i in 0..half {
            let w = m.inv[half + i];
            let ws = m.inv_shoup[half + i];
            let start = 2 * i * t;
            let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let u = *x;
                let v = *y;
                *x = m.add(u, v);
                *y = mul_shoup(m.sub(u, v), w, ws, q);
            }
        }
        t <<= 1;
        groups = half;
    }
    for x in a.iter_mut() {
        *x = mul_shoup(*x, m.n_inv, m.n_inv_shoup, q);
    }
}
