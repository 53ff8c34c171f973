use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, RingContext, RingPoly};

/// Rejection bound for the Gaussian sampler, in multiples of sigma.
pub const GAUSSIAN_TAIL_CUT: f64 = 6.0;

/// Coefficient distributions used by the scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Uniform over {-1, 0, 1}.
    Ternary,
    /// Rounded centered normal, rejecting samples beyond 6 sigma.
    Gaussian(f64),
    /// Uniform in `[0, q_i)` independently per limb.
    Uniform,
}

/// Draws `n` signed coefficients. Not defined for [`Sampling::Uniform`].
pub fn sample_signed<R: Rng + ?Sized>(n: usize, kind: Sampling, rng: &mut R) -> Vec<i64> {
    match kind {
        Sampling::Ternary => (0..n).map(|_| rng.gen_range(-1i64..=1)).collect(),
        Sampling::Gaussian(sigma) => {
            assert!(sigma > 0.0, "gaussian width must be positive");
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            let bound = GAUSSIAN_TAIL_CUT * sigma;
            (0..n)
                .map(|_| loop {
                    let x: f64 = normal.sample(rng);
                    if x.abs() <= bound {
                        break x.round() as i64;
                    }
                })
                .collect()
        }
        Sampling::Uniform => panic!("uniform sampling is per-limb; use `sample`"),
    }
}

/// A fresh coefficient-domain polynomial over primes `0..=level`.
pub fn sample<R: Rng + ?Sized>(
    ctx: &Arc<RingContext>,
    level: usize,
    kind: Sampling,
    rng: &mut R,
) -> RingPoly {
    match kind {
        Sampling::Uniform => {
            let limbs = ctx.moduli()[..=level]
                .iter()
                .map(|m| (0..ctx.degree()).map(|_| rng.gen_range(0..m.value())).collect())
                .collect();
            RingPoly::from_limbs(ctx, limbs, Domain::Coeff).expect("reduced by construction")
        }
        _ => RingPoly::from_signed(ctx, level, &sample_signed(ctx.degree(), kind, rng)),
    }
}
