//! Probit data augmentation: one-sided truncated-normal draws for the
//! continuous latents behind binary responses.
//!
//! The update calls for z ~ N(f, 1) truncated to the side matching the
//! label. Clamping a normal draw at zero does not sample that distribution;
//! these are proper inverse-CDF draws routed through the survival function
//! so the deep-tail case (f far from zero on the wrong side) stays finite
//! and in-range.

use rand::Rng;

use crate::stats::{normal_inv_cdf, normal_cdf, normal_sf};

/// Draw from a standard normal conditioned on Z > a.
pub fn truncated_standard_above<R: Rng>(a: f64, rng: &mut R) -> f64 {
    let mut u: f64 = rng.random();
    if u <= 0.0 {
        u = f64::MIN_POSITIVE;
    }
    let s = (u * normal_sf(a)).max(f64::MIN_POSITIVE);
    -normal_inv_cdf(s)
}

/// Draw from a standard normal conditioned on Z < a.
pub fn truncated_standard_below<R: Rng>(a: f64, rng: &mut R) -> f64 {
    let mut u: f64 = rng.random();
    if u <= 0.0 {
        u = f64::MIN_POSITIVE;
    }
    let s = (u * normal_cdf(a)).max(f64::MIN_POSITIVE);
    normal_inv_cdf(s)
}

/// Probit latent draw: z ~ N(f, 1) truncated to (0, inf) when y = 1 and to
/// (-inf, 0) when y = 0. The tiny clamp only guards the sign invariant
/// against quantile-function rounding at the boundary.
pub fn draw_probit_latent<R: Rng>(f: f64, y_is_one: bool, rng: &mut R) -> f64 {
    if y_is_one {
        (f + truncated_standard_above(-f, rng)).max(f64::MIN_POSITIVE)
    } else {
        (f + truncated_standard_below(-f, rng)).min(-f64::MIN_POSITIVE)
    }
}
