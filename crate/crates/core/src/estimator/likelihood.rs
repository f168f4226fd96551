//! Profiled Gaussian likelihood of the model error under the discrepancy prior.
//!
//! The error `ε` is modelled as `N(0, σ²_f·Φ_n)`. Profiling out `σ²_f` gives
//! `σ̂²_f = εᵀΦ_n⁻¹ε / N` and the objective `J = |Φ_n|^(1/N)·εᵀΦ_n⁻¹ε`, which
//! is minimized. Determinants are only handled in the log domain.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::EstimateError;
use crate::gp::SpdFactor;

/// `log|Φ_n|` and `εᵀΦ_n⁻¹ε` from one factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticTerms {
    pub log_det: f64,
    pub quad: f64,
    pub n: usize,
}

impl QuadraticTerms {
    pub fn new(eps: &[f64], phi_n: &DMatrix<f64>) -> Result<Self, EstimateError> {
        let factor = SpdFactor::new(phi_n)?;
        Self::from_factor(eps, &factor)
    }

    pub fn from_factor(eps: &[f64], factor: &SpdFactor) -> Result<Self, EstimateError> {
        if eps.is_empty() {
            return Err(EstimateError::InvalidProblem("empty error vector".into()));
        }
        Ok(Self { log_det: factor.log_det(), quad: factor.quad_form(eps)?, n: eps.len() })
    }

    /// σ̂²_f = εᵀΦ_n⁻¹ε / N.
    pub fn sigma2_f(&self) -> f64 {
        self.quad / self.n as f64
    }

    /// J = exp(log|Φ_n| / N)·εᵀΦ_n⁻¹ε.
    pub fn objective(&self) -> f64 {
        (self.log_det / self.n as f64).exp() * self.quad
    }

    /// Log likelihood at a given scale factor.
    pub fn log_likelihood(&self, sigma2_f: f64) -> f64 {
        let n = self.n as f64;
        -0.5 * n * (2.0 * PI * sigma2_f).ln() - 0.5 * self.log_det - self.quad / (2.0 * sigma2_f)
    }

    /// Log likelihood with σ²_f profiled out, evaluated term by term.
    pub fn profiled_log_likelihood(&self) -> f64 {
        let n = self.n as f64;
        -0.5 * n * (2.0 * PI / n * self.quad).ln() - 0.5 * self.log_det - 0.5 * n
    }
}

/// σ̂²_f = (1/N)·εᵀΦ_n⁻¹ε.
pub fn profiled_sigma2_f(eps: &[f64], phi_n: &DMatrix<f64>) -> Result<f64, EstimateError> {
    check_dim(eps, phi_n)?;
    Ok(QuadraticTerms::new(eps, phi_n)?.sigma2_f())
}

/// `−(N/2)·log 2πσ²_f − ½·log|Φ_n| − εᵀΦ_n⁻¹ε/(2σ²_f)`.
pub fn log_likelihood(eps: &[f64], phi_n: &DMatrix<f64>, sigma2_f: f64) -> Result<f64, EstimateError> {
    if !(sigma2_f > 0.0) {
        return Err(EstimateError::InvalidProblem(format!("sigma2_f = {sigma2_f} must be positive")));
    }
    check_dim(eps, phi_n)?;
    Ok(QuadraticTerms::new(eps, phi_n)?.log_likelihood(sigma2_f))
}

/// Profiled log likelihood (the quantity the estimator maximizes).
pub fn profiled_log_likelihood(eps: &[f64], phi_n: &DMatrix<f64>) -> Result<f64, EstimateError> {
    check_dim(eps, phi_n)?;
    Ok(QuadraticTerms::new(eps, phi_n)?.profiled_log_likelihood())
}

/// `J = |Φ_n|^(1/N)·εᵀΦ_n⁻¹ε`.
pub fn kog_value(eps: &[f64], phi_n: &DMatrix<f64>) -> Result<f64, EstimateError> {
    check_dim(eps, phi_n)?;
    Ok(QuadraticTerms::new(eps, phi_n)?.objective())
}

/// `J = εᵀε`.
pub fn ls_value(eps: &[f64]) -> f64 {
    eps.iter().map(|e| e * e).sum()
}

/// Profiled log likelihood recovered from J: `−(N/2)(1 + log(2πJ/N))`.
pub fn log_likelihood_from_objective(j: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * (1.0 + (2.0 * PI * j / n).ln())
}

fn check_dim(eps: &[f64], phi_n: &DMatrix<f64>) -> Result<(), EstimateError> {
    if phi_n.nrows() != eps.len() || phi_n.ncols() != eps.len() {
        return Err(EstimateError::InvalidProblem(format!(
            "covariance is {}x{} but the error vector has {} entries",
            phi_n.nrows(),
            phi_n.ncols(),
            eps.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_zero() {
        let ll = log_likelihood(&[0.0], &DMatrix::identity(1, 1), 1.0).unwrap();
        assert!((ll + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((ll + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn identity_covariance_gives_mean_square() {
        let eps = [0.01, -0.02, 0.03];
        let s = profiled_sigma2_f(&eps, &DMatrix::identity(3, 3)).unwrap();
        assert!((s - ls_value(&eps) / 3.0).abs() < 1e-18);
        let s2 = profiled_sigma2_f(&eps.map(|e| 2.0 * e), &DMatrix::identity(3, 3)).unwrap();
        assert!((s2 - 4.0 * s).abs() < 1e-18);
    }

    #[test]
    fn zero_error_zero_objective() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.1, 0.5, 0.5, 1.1]);
        assert_eq!(kog_value(&[0.0, 0.0], &phi).unwrap(), 0.0);
        assert_eq!(profiled_sigma2_f(&[0.0, 0.0], &phi).unwrap(), 0.0);
    }

    #[test]
    fn tiny_scale_strongly_negative() {
        let ll = log_likelihood(&[0.5, -0.4], &DMatrix::identity(2, 2), 1e-8).unwrap();
        assert!(ll < -1e6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(log_likelihood(&[0.0], &DMatrix::identity(1, 1), 0.0).is_err());
        assert!(kog_value(&[0.0, 1.0], &DMatrix::identity(3, 3)).is_err());
    }
}
