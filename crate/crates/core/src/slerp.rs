//! Spherical linear interpolation of embedding vectors.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Below this value of `sin(Ω)` the endpoints are treated as parallel and
/// interpolation falls back to normalized linear blending.
pub const PARALLEL_EPSILON: f64 = 1e-7;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Interpolates along the great circle from `a` (λ = 0) to `b` (λ = 1).
///
/// The angle is `Ω = arccos(a·b / (‖a‖‖b‖))` with the cosine clamped to
/// `[-1, 1]`, and the result is
/// `sin((1-λ)Ω)/sin(Ω) · a + sin(λΩ)/sin(Ω) · b`.
///
/// Nearly parallel inputs (`sin Ω < PARALLEL_EPSILON`, cosine positive) are
/// blended linearly, then rescaled to the linearly interpolated norm.
/// Nearly antipodal inputs are rejected with [`Error::Antipodal`].
pub fn slerp(a: &[f64], b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::Empty("interpolation endpoint"));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "interpolation endpoints",
            expected: a.len(),
            found: b.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("interpolation endpoint"));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("interpolation endpoint"));
    }

    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    let omega = libm::acos(cos);
    let sin_omega = libm::sin(omega);

    if sin_omega < PARALLEL_EPSILON {
        if cos < 0.0 {
            return Err(Error::Antipodal);
        }
        return Ok(lerp_normalized(a, b, na, nb, lambda));
    }

    let wa = libm::sin((1.0 - lambda) * omega) / sin_omega;
    let wb = libm::sin(lambda * omega) / sin_omega;
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

fn lerp_normalized(a: &[f64], b: &[f64], na: f64, nb: f64, lambda: f64) -> Vec<f64> {
    if lambda == 0.0 {
        return a.to_vec();
    }
    if lambda == 1.0 {
        return b.to_vec();
    }
    let mut out: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (1.0 - lambda) * x + lambda * y)
        .collect();
    let target = (1.0 - lambda) * na + lambda * nb;
    let current = norm(&out);
    let scale = target / current;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}
