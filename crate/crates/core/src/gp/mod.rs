//! Squared-exponential Gaussian-process machinery.
//!
//! All covariance solves go through [`SpdFactor`]; nothing is inverted
//! explicitly.

mod linalg;
mod residual;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use linalg::{SpdFactor, JITTER_MAX, JITTER_START};
pub use residual::{hybrid_predict, ResidualModel, ResidualModelConfig};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in kernel inputs")]
    NonFinite,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("covariance matrix is ill-conditioned (condition estimate {condition_estimate:.3e}) even with jitter {jitter:e}")]
    IllConditioned { condition_estimate: f64, jitter: f64 },
    #[error("triangular solve failed")]
    SolveFailed,
    #[error("empty training set")]
    Empty,
}

/// `γ` plus the profiled scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelHyperparameters {
    /// σ²_f, V².
    pub sigma2_f: f64,
    /// One length scale per feature, in (standardized) feature units.
    pub length_scales: Vec<f64>,
    /// σ̃²_n = σ²_n / σ²_f.
    pub sigma2_n_tilde: f64,
}

impl KernelHyperparameters {
    pub fn new(sigma2_f: f64, length_scales: Vec<f64>, sigma2_n_tilde: f64) -> Result<Self, GpError> {
        let hp = Self { sigma2_f, length_scales, sigma2_n_tilde };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.sigma2_f > 0.0 && self.sigma2_f.is_finite()) {
            return Err(GpError::InvalidHyperparameter(format!("sigma2_f = {}", self.sigma2_f)));
        }
        if let Some(l) = self.length_scales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(GpError::InvalidHyperparameter(format!("length scale {l}")));
        }
        if !(self.sigma2_n_tilde >= 0.0 && self.sigma2_n_tilde.is_finite()) {
            return Err(GpError::InvalidHyperparameter(format!("sigma2_n_tilde = {}", self.sigma2_n_tilde)));
        }
        Ok(())
    }

    /// σ²_n = σ̃²_n · σ²_f.
    pub fn sigma2_n(&self) -> f64 {
        self.sigma2_n_tilde * self.sigma2_f
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }
}

/// N feature vectors of dimension d, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    dim: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self, GpError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(GpError::DimensionMismatch { expected: dim, found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<const D: usize>(rows: &[[f64; D]]) -> Result<Self, GpError> {
        Self::new(rows.iter().flatten().copied().collect(), D)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Rows at the given indices.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { data, dim: self.dim }
    }

    fn scaled(&self, length_scales: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .flat_map(|r| r.iter().zip(length_scales).map(|(v, l)| v / l))
            .collect()
    }
}

/// Per-dimension z-score transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Standard deviations; dimensions with zero spread keep a scale of 1.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.rows().max(1) as f64;
        let d = x.dim();
        let mut mean = vec![0.0; d];
        for r in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x.iter_rows() {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = (v / n).sqrt();
                // Relative floor: constant columns carry only rounding noise.
                if s > 0.0 && s > 1e-12 * m.abs() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let data = x
            .iter_rows()
            .flat_map(|r| r.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j]))
            .collect();
        FeatureMatrix { data, dim: x.dim() }
    }
}

/// Squared-exponential covariance `σ²_f·exp(−½ Σ ((x_j − x'_j)/l_j)²)`.
pub fn kernel(x: &[f64], x_prime: &[f64], hp: &KernelHyperparameters) -> Result<f64, GpError> {
    if x.len() != hp.dim() {
        return Err(GpError::DimensionMismatch { expected: hp.dim(), found: x.len() });
    }
    if x_prime.len() != hp.dim() {
        return Err(GpError::DimensionMismatch { expected: hp.dim(), found: x_prime.len() });
    }
    let r2: f64 = x
        .iter()
        .zip(x_prime)
        .zip(&hp.length_scales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    Ok(hp.sigma2_f * (-0.5 * r2).exp())
}

fn check_dims(x: &FeatureMatrix, length_scales: &[f64]) -> Result<(), GpError> {
    if x.dim() != length_scales.len() {
        return Err(GpError::DimensionMismatch { expected: length_scales.len(), found: x.dim() });
    }
    Ok(())
}

/// Unscaled cross-correlation Φ(A, B) = K(A, B)/σ²_f.
pub fn correlation(a: &FeatureMatrix, b: &FeatureMatrix, length_scales: &[f64]) -> Result<DMatrix<f64>, GpError> {
    check_dims(a, length_scales)?;
    check_dims(b, length_scales)?;
    let d = a.dim();
    let sa = a.scaled(length_scales);
    let sb = b.scaled(length_scales);
    Ok(DMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        let r2: f64 = sa[i * d..(i + 1) * d]
            .iter()
            .zip(&sb[j * d..(j + 1) * d])
            .map(|(u, v)| (u - v) * (u - v))
            .sum();
        (-0.5 * r2).exp()
    }))
}

/// Unscaled noisy covariance Φ_n = Φ + σ̃²_n·I.
pub fn build_phi_n(x: &FeatureMatrix, length_scales: &[f64], sigma2_n_tilde: f64) -> Result<DMatrix<f64>, GpError> {
    check_dims(x, length_scales)?;
    if x.rows() == 0 {
        return Err(GpError::Empty);
    }
    if let Some(l) = length_scales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(GpError::InvalidHyperparameter(format!("length scale {l}")));
    }
    let n = x.rows();
    let d = x.dim();
    let s = x.scaled(length_scales);
    let mut phi = DMatrix::zeros(n, n);
    for i in 0..n {
        phi[(i, i)] = 1.0 + sigma2_n_tilde;
        let ri = &s[i * d..(i + 1) * d];
        for j in 0..i {
            let r2: f64 = ri.iter().zip(&s[j * d..(j + 1) * d]).map(|(u, v)| (u - v) * (u - v)).sum();
            let k = (-0.5 * r2).exp();
            phi[(i, j)] = k;
            phi[(j, i)] = k;
        }
    }
    Ok(phi)
}

/// Posterior mean (V) and covariance (V²) at the test points.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

/// GP regression prediction.
///
/// `mean = K_*ᵀK_n⁻¹y`, `cov = K_** − K_*ᵀK_n⁻¹K_* + σ²_n·I`.
pub fn gpr_predict(
    x: &FeatureMatrix,
    y: &[f64],
    x_star: &FeatureMatrix,
    hp: &KernelHyperparameters,
) -> Result<GpPosterior, GpError> {
    hp.validate()?;
    if y.len() != x.rows() {
        return Err(GpError::DimensionMismatch { expected: x.rows(), found: y.len() });
    }
    let phi_n = build_phi_n(x, &hp.length_scales, hp.sigma2_n_tilde)?;
    let factor = SpdFactor::new(&phi_n)?;
    let phi_star = correlation(x, x_star, &hp.length_scales)?;
    // K_n = σ²_f Φ_n and K_* = σ²_f Φ_*, so the scale cancels in the mean.
    let alpha = factor.solve(y)?;
    let mean = (phi_star.transpose() * alpha).iter().copied().collect();

    let v = factor.whiten_matrix(&phi_star)?;
    let phi_ss = correlation(x_star, x_star, &hp.length_scales)?;
    let mut covariance = (phi_ss - v.transpose() * v) * hp.sigma2_f;
    let noise = hp.sigma2_n();
    for i in 0..covariance.nrows() {
        covariance[(i, i)] += noise;
    }
    // Exact symmetry.
    let covariance = (covariance.clone() + covariance.transpose()) * 0.5;
    Ok(GpPosterior { mean, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(l: Vec<f64>, s2f: f64, s2n: f64) -> KernelHyperparameters {
        KernelHyperparameters::new(s2f, l, s2n).unwrap()
    }

    #[test]
    fn kernel_values() {
        let h = hp(vec![1.0], 1.0, 0.0);
        assert_eq!(kernel(&[0.3], &[0.3], &h).unwrap(), 1.0);
        assert!((kernel(&[0.0], &[1.0], &h).unwrap() - (-0.5_f64).exp()).abs() < 1e-15);
        assert!((kernel(&[0.0], &[1.0], &h).unwrap() - 0.60653).abs() < 1e-5);
        assert_eq!(kernel(&[0.0], &[1e3], &h).unwrap(), 0.0);
        let h2 = hp(vec![1.0, 2.0], 2.5, 0.0);
        assert_eq!(kernel(&[1.0, 1.0], &[1.0, 1.0], &h2).unwrap(), 2.5);
        assert!(kernel(&[1.0], &[1.0, 2.0], &h2).is_err());
    }

    #[test]
    fn phi_n_diagonal_and_limits() {
        let x = FeatureMatrix::from_rows(&[[0.0, 1.0], [0.5, 0.2], [3.0, -1.0]]).unwrap();
        let phi = build_phi_n(&x, &[1.0, 1.0], 0.1).unwrap();
        for i in 0..3 {
            assert_eq!(phi[(i, i)], 1.1);
        }
        assert_eq!(phi, phi.transpose());

        let dup = FeatureMatrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let phi = build_phi_n(&dup, &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(phi[(0, 1)], 1.0);

        let far = FeatureMatrix::from_rows(&[[0.0], [1e4], [2e4]]).unwrap();
        let phi = build_phi_n(&far, &[1.0], 0.1).unwrap();
        assert_eq!(phi, DMatrix::identity(3, 3) * 1.1);
    }

    #[test]
    fn non_finite_features_rejected() {
        assert_eq!(FeatureMatrix::new(vec![1.0, f64::NAN], 2).unwrap_err(), GpError::NonFinite);
    }

    #[test]
    fn single_point_closed_form() {
        let h = hp(vec![0.7], 2.0, 0.05);
        let x = FeatureMatrix::from_rows(&[[0.2]]).unwrap();
        let xs = FeatureMatrix::from_rows(&[[0.9]]).unwrap();
        let y = [0.013];
        let post = gpr_predict(&x, &y, &xs, &h).unwrap();
        let k = 2.0 * (-0.5 * (0.7_f64 / 0.7).powi(2)).exp();
        let expected = k * y[0] / (2.0 + 0.1);
        assert!((post.mean[0] - expected).abs() < 1e-15);
        let cov = 2.0 - k * k / 2.1 + 0.1;
        assert!((post.covariance[(0, 0)] - cov).abs() < 1e-14);
    }

    #[test]
    fn zero_targets_give_zero_mean() {
        let h = hp(vec![1.0, 1.0], 1.3, 0.1);
        let x = FeatureMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.5], [0.3, -0.4]]).unwrap();
        let xs = FeatureMatrix::from_rows(&[[0.2, 0.2], [2.0, 1.0]]).unwrap();
        let post = gpr_predict(&x, &[0.0; 3], &xs, &h).unwrap();
        assert!(post.mean.iter().all(|m| *m == 0.0));
        assert!(post.covariance[(0, 0)] >= h.sigma2_n());
    }

    #[test]
    fn standardizer_handles_constant_column() {
        let x = FeatureMatrix::from_rows(&[[5.0, 1.0], [5.0, 3.0]]).unwrap();
        let s = Standardizer::fit(&x);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.mean, vec![5.0, 2.0]);
        let z = s.apply(&x);
        assert_eq!(z.row(0), &[0.0, -1.0]);
        assert_eq!(z.row(1), &[0.0, 1.0]);
    }
}
