use super::EstimateError;
use crate::cell::{Trajectory, FEATURE_DIM};
use crate::gp::FeatureMatrix;

/// Model error `ε_k = y^m_k − y_k` with the discrepancy inputs of each retained step.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorVector {
    pub values: Vec<f64>,
    pub features: FeatureMatrix,
    /// Positions of the entries in the full-resolution sequence.
    pub indices: Vec<usize>,
}

impl ErrorVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Full-resolution model error against a simulated trajectory.
pub fn model_error(measured: &[f64], trajectory: &Trajectory) -> Result<ErrorVector, EstimateError> {
    if measured.len() != trajectory.len() {
        return Err(EstimateError::LengthMismatch { expected: measured.len(), found: trajectory.len() });
    }
    let values: Vec<f64> = measured.iter().zip(&trajectory.records).map(|(m, r)| m - r.voltage).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EstimateError::InvalidProblem("non-finite model error".into()));
    }
    let mut data = Vec::with_capacity(trajectory.len() * FEATURE_DIM);
    for r in &trajectory.records {
        data.extend_from_slice(&r.features());
    }
    let features = FeatureMatrix::new(data, FEATURE_DIM)?;
    Ok(ErrorVector { values, features, indices: (0..measured.len()).collect() })
}

/// Evenly spaced indices `round(i·(N−1)/(M−1))`, i = 0…M−1.
///
/// Uses integer arithmetic (round half up) so the result is identical on
/// every platform.
pub fn downsample_indices(n_full: usize, m: usize) -> Result<Vec<usize>, EstimateError> {
    if m == 0 || m > n_full {
        return Err(EstimateError::Downsample { requested: m, available: n_full });
    }
    if m == 1 {
        return Ok(vec![0]);
    }
    let num = (n_full - 1) as u128;
    let den = (m - 1) as u128;
    let idx: Vec<usize> = (0..m as u128).map(|i| ((2 * i * num + den) / (2 * den)) as usize).collect();
    debug_assert!(idx.windows(2).all(|w| w[1] > w[0]));
    Ok(idx)
}

/// Retains `m` evenly spaced entries.
pub fn downsample(err: &ErrorVector, m: usize) -> Result<ErrorVector, EstimateError> {
    let local = downsample_indices(err.len(), m)?;
    Ok(ErrorVector {
        values: local.iter().map(|&i| err.values[i]).collect(),
        features: err.features.select(&local),
        indices: local.iter().map(|&i| err.indices[i]).collect(),
    })
}
