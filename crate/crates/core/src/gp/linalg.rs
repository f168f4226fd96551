use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::GpError;

/// First diagonal jitter tried when a factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest diagonal jitter before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of a symmetric positive definite matrix.
///
/// When the plain factorization fails, jitter is added to the diagonal
/// starting at [`JITTER_START`] and growing ×10 up to [`JITTER_MAX`].
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self, GpError> {
        if !matrix.is_square() {
            return Err(GpError::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        if let Some(chol) = Cholesky::new(matrix.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX * (1.0 + 1e-9) {
            let mut m = matrix.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self { chol, jitter });
            }
            jitter *= 10.0;
        }
        Err(GpError::IllConditioned { condition_estimate: condition_estimate(matrix), jitter: JITTER_MAX })
    }

    /// Diagonal jitter that was needed, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// log|A| from the Cholesky pivots.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Smallest Cholesky pivot L_ii.
    pub fn min_pivot(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    /// vᵀA⁻¹v.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64, GpError> {
        let z = self.whiten(v)?;
        Ok(z.norm_squared())
    }

    /// L⁻¹v.
    pub fn whiten(&self, v: &[f64]) -> Result<DVector<f64>, GpError> {
        if v.len() != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        let rhs = DVector::from_column_slice(v);
        self.chol.l_dirty().solve_lower_triangular(&rhs).ok_or(GpError::SolveFailed)
    }

    /// A⁻¹v.
    pub fn solve(&self, v: &[f64]) -> Result<DVector<f64>, GpError> {
        if v.len() != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        Ok(self.chol.solve(&DVector::from_column_slice(v)))
    }

    /// A⁻¹B.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// L⁻¹B.
    pub fn whiten_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>, GpError> {
        self.chol.l_dirty().solve_lower_triangular(b).ok_or(GpError::SolveFailed)
    }
}

/// 2-norm condition number from the symmetric eigenvalues; only used on the
/// failure path.
fn condition_estimate(matrix: &DMatrix<f64>) -> f64 {
    let eig = matrix.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_and_quad_form_on_known_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = SpdFactor::new(&a).unwrap();
        assert!((f.log_det() - 8.0_f64.ln()).abs() < 1e-14);
        // [1, 1] A⁻¹ [1, 1]ᵀ with A⁻¹ = [3 -2; -2 4] / 8
        assert!((f.quad_form(&[1.0, 1.0]).unwrap() - 3.0 / 8.0).abs() < 1e-14);
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn rank_deficient_needs_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let f = SpdFactor::new(&a).unwrap();
        assert!(f.jitter() >= JITTER_START && f.jitter() <= JITTER_MAX);
        assert!(f.min_pivot() > 0.0);
    }

    #[test]
    fn indefinite_is_ill_conditioned() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match SpdFactor::new(&a) {
            Err(GpError::IllConditioned { condition_estimate, .. }) => {
                assert!((condition_estimate - 3.0).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
