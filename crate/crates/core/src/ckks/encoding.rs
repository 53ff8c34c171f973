//! Canonical embedding between real slot vectors and ring elements.
//!
//! Slot `j` is the evaluation at `ζ^{3^j}`, `ζ = e^{iπ/N}`, so the automorphism
//! `X -> X^{3^r}` rotates slots left by `r`. All odd powers of `ζ` are reached
//! with one size-`N` FFT after twisting coefficient `k` by `ζ^k`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Encoder {
    degree: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `ζ^k` for `k < N`.
    twist: Vec<Complex64>,
    /// FFT bin holding slot `j` (`bin t` ↔ exponent `2t + 1`).
    slot_bin: Vec<usize>,
    /// FFT bin holding the conjugate of slot `j`.
    conj_bin: Vec<usize>,
}

impl Encoder {
    pub(crate) fn new(degree: usize) -> Self {
        let mut planner = FftPlanner::new();
        let two_n = 2 * degree;
        let slots = degree / 2;
        let mut slot_bin = Vec::with_capacity(slots);
        let mut conj_bin = Vec::with_capacity(slots);
        let mut e = 1usize;
        for _ in 0..slots {
            slot_bin.push((e - 1) / 2);
            conj_bin.push((two_n - e - 1) / 2);
            e = e * 3 % two_n;
        }
        let twist = (0..degree)
            .map(|k| {
                let (s, c) = (PI * k as f64 / degree as f64).sin_cos();
                Complex64::new(c, s)
            })
            .collect();
        Self {
            degree,
            forward: planner.plan_fft_forward(degree),
            inverse: planner.plan_fft_inverse(degree),
            twist,
            slot_bin,
            conj_bin,
        }
    }

    /// Real coefficients (unrounded) of the polynomial whose slots are
    /// `values · scale`, zero-padded to `N/2` slots.
    pub(crate) fn embed_inverse(&self, values: &[f64], scale: f64) -> Vec<f64> {
        let n = self.degree;
        let mut bins = vec![Complex64::new(0.0, 0.0); n];
        for (j, &v) in values.iter().enumerate() {
            let z = Complex64::new(v * scale, 0.0);
            bins[self.slot_bin[j]] = z;
            bins[self.conj_bin[j]] = z.conj();
        }
        self.forward.process(&mut bins);
        let inv_n = 1.0 / n as f64;
        bins.iter()
            .zip(&self.twist)
            .map(|(a, w)| (a * w.conj()).re * inv_n)
            .collect()
    }

    /// Real parts of the slot values of a polynomial with real coefficients.
    pub(crate) fn embed(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = coeffs.iter().zip(&self.twist).map(|(&c, w)| w * c).collect();
        self.inverse.process(&mut buf);
        self.slot_bin.iter().map(|&t| buf[t].re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(N^2) evaluation of the polynomial at `ζ^{3^j}`.
    fn naive_slots(coeffs: &[f64]) -> Vec<f64> {
        let n = coeffs.len();
        let mut e = 1usize;
        let mut out = Vec::new();
        for _ in 0..n / 2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &c) in coeffs.iter().enumerate() {
                let angle = PI * ((e * k) % (2 * n)) as f64 / n as f64;
                acc += Complex64::from_polar(c, angle);
            }
            out.push(acc.re);
            e = e * 3 % (2 * n);
        }
        out
    }

    #[test]
    fn fft_embedding_matches_direct_evaluation() {
        let enc = Encoder::new(32);
        let coeffs: Vec<f64> = (0..32).map(|k| ((k * 7 % 11) as f64) - 5.0).collect();
        let fast = enc.embed(&coeffs);
        let slow = naive_slots(&coeffs);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn inverse_then_forward_is_identity() {
        let enc = Encoder::new(64);
        let values: Vec<f64> = (0..32).map(|j| (j as f64 * 1.37).sin() * 100.0).collect();
        let coeffs = enc.embed_inverse(&values, 1.0);
        let back = enc.embed(&coeffs);
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_vector_embeds_to_constant() {
        let enc = Encoder::new(64);
        let coeffs = enc.embed_inverse(&[3.5; 32], 1.0);
        assert!((coeffs[0] - 3.5).abs() < 1e-12);
        assert!(coeffs[1..].iter().all(|c| c.abs() < 1e-12));
    }
}
