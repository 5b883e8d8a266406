//! Fréchet distance between two Gaussians fitted to feature sets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{sqrt_psd, symmetric_eigen, Square};

const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Sample mean and sample covariance (divisor `N − 1`) of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub covariance: Vec<f64>,
}

impl Moments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Streams the rows through a running mean / co-moment update.
pub fn moments_from_features<R: AsRef<[f64]>>(rows: &[R]) -> Result<Moments> {
    if rows.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "feature row count",
            value: rows.len() as f64,
        });
    }
    let d = rows[0].as_ref().len();
    if d == 0 {
        return Err(Error::Empty("feature vector"));
    }
    let mut mean = vec![0.0; d];
    let mut comoment = vec![0.0; d * d];
    let mut delta = vec![0.0; d];
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: d,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        let k = (i + 1) as f64;
        for j in 0..d {
            delta[j] = row[j] - mean[j];
            mean[j] += delta[j] / k;
        }
        // C += (x - mean_old)(x - mean_new)^T
        for a in 0..d {
            let da = delta[a];
            for b in 0..d {
                comoment[a * d + b] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (rows.len() - 1) as f64;
    let mut covariance: Vec<f64> = comoment.iter().map(|c| c / denom).collect();
    for a in 0..d {
        for b in (a + 1)..d {
            let m = 0.5 * (covariance[a * d + b] + covariance[b * d + a]);
            covariance[a * d + b] = m;
            covariance[b * d + a] = m;
        }
    }
    Ok(Moments { mean, covariance })
}

fn check_covariance(what: &'static str, cov: &[f64], d: usize) -> Result<Square> {
    if cov.len() != d * d {
        return Err(Error::DimensionMismatch {
            what,
            expected: d * d,
            found: cov.len(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    let scale = cov.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        for j in (i + 1)..d {
            if (cov[i * d + j] - cov[j * d + i]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(Error::NotSymmetric { what });
            }
        }
    }
    let mut m = Square { n: d, a: cov.to_vec() };
    m.symmetrize();
    Ok(m)
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^{1/2})`, clamped at zero.
///
/// The trace of the product root is taken from the symmetric matrix
/// `Σ1^{1/2} Σ2 Σ1^{1/2}`, which shares its eigenvalues with `Σ1 Σ2`;
/// eigenvalues below zero are clamped.
pub fn frechet_distance(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if d == 0 {
        return Err(Error::Empty("mean vector"));
    }
    if mu2.len() != d {
        return Err(Error::DimensionMismatch {
            what: "mean vector",
            expected: d,
            found: mu2.len(),
        });
    }
    if mu1.iter().chain(mu2).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mean vector"));
    }
    let s1 = check_covariance("covariance 1", sigma1, d)?;
    let s2 = check_covariance("covariance 2", sigma2, d)?;

    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();

    let root1 = sqrt_psd(&s1);
    let mut inner = root1.matmul(&s2).matmul(&root1);
    inner.symmetrize();
    let (eigenvalues, _) = symmetric_eigen(&inner);
    let trace_root: f64 = eigenvalues.iter().map(|&l| libm::sqrt(l.max(0.0))).sum();

    let distance = mean_term + s1.trace() + s2.trace() - 2.0 * trace_root;
    Ok(distance.max(0.0))
}

/// Fréchet distance between two fitted moment sets.
pub fn frechet_between(a: &Moments, b: &Moments) -> Result<f64> {
    frechet_distance(&a.mean, &a.covariance, &b.mean, &b.covariance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        m
    }

    #[test]
    fn identical_gaussians() {
        let s = vec![2.0, 0.3, 0.3, 1.0];
        let d = frechet_distance(&[1.0, 2.0], &s, &[1.0, 2.0], &s).unwrap();
        assert!(d.abs() < 1e-8);
    }

    #[test]
    fn shifted_identity() {
        let d = frechet_distance(&[0.0, 0.0, 0.0], &identity(3), &[1.0, 2.0, 2.0], &identity(3)).unwrap();
        assert_eq!(d, 9.0);
    }

    #[test]
    fn scalar_case() {
        // (σ1 - σ2)^2 for 1-D Gaussians with variances σ².
        let d = frechet_distance(&[0.0], &[4.0], &[0.0], &[9.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_mismatched() {
        assert!(matches!(
            frechet_distance(&[0.0, 0.0], &[1.0, 0.5, 0.0, 1.0], &[0.0, 0.0], &identity(2)),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            frechet_distance(&[0.0], &identity(2), &[0.0, 0.0], &identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn moments_examples() {
        let m = moments_from_features(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        assert_eq!(m.mean, vec![1.0, 1.0]);
        assert_eq!(m.covariance, vec![2.0, 2.0, 2.0, 2.0]);
        let m = moments_from_features(&[[1.5, -3.0], [1.5, -3.0]]).unwrap();
        assert_eq!(m.covariance, vec![0.0; 4]);
        assert!(moments_from_features(&[[1.0]]).is_err());
    }
}
