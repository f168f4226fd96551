use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{build_phi_n, correlation, FeatureMatrix, GpError, KernelHyperparameters, SpdFactor, Standardizer};

/// Adds the residual correction to the physics-model voltage.
pub fn hybrid_predict(v_spme: &[f64], delta_v: &[f64]) -> Result<Vec<f64>, GpError> {
    if v_spme.len() != delta_v.len() {
        return Err(GpError::DimensionMismatch { expected: v_spme.len(), found: delta_v.len() });
    }
    Ok(v_spme.iter().zip(delta_v).map(|(v, d)| v + d).collect())
}

/// Hyperparameters and input transform of a trained residual model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualModelConfig {
    pub hyperparameters: KernelHyperparameters,
    pub standardizer: Standardizer,
}

impl ResidualModelConfig {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("residual config serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(s).map_err(|e| e.to_string())?;
        cfg.hyperparameters.validate().map_err(|e| e.to_string())?;
        if cfg.standardizer.mean.len() != cfg.hyperparameters.dim()
            || cfg.standardizer.scale.len() != cfg.hyperparameters.dim()
        {
            return Err("standardizer and length scales disagree on feature dimension".into());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&text)
    }
}

/// GP residual model conditioned on (features, voltage residual) pairs.
#[derive(Debug, Clone)]
pub struct ResidualModel {
    config: ResidualModelConfig,
    train: FeatureMatrix,
    alpha: DVector<f64>,
}

impl ResidualModel {
    /// Conditions on raw (unstandardized) training features and residuals.
    pub fn fit(config: ResidualModelConfig, x: &FeatureMatrix, residuals: &[f64]) -> Result<Self, GpError> {
        config.hyperparameters.validate()?;
        if residuals.len() != x.rows() {
            return Err(GpError::DimensionMismatch { expected: x.rows(), found: residuals.len() });
        }
        let train = config.standardizer.apply(x);
        let hp = &config.hyperparameters;
        let factor = SpdFactor::new(&build_phi_n(&train, &hp.length_scales, hp.sigma2_n_tilde)?)?;
        let alpha = factor.solve(residuals)?;
        Ok(Self { config, train, alpha })
    }

    pub fn config(&self) -> &ResidualModelConfig {
        &self.config
    }

    /// Posterior mean residual at raw features.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, GpError> {
        let z = self.config.standardizer.apply(x);
        let phi_star = correlation(&self.train, &z, &self.config.hyperparameters.length_scales)?;
        Ok((phi_star.transpose() * &self.alpha).iter().copied().collect())
    }

    /// Physics voltage plus predicted residual.
    pub fn correct(&self, v_spme: &[f64], x: &FeatureMatrix) -> Result<Vec<f64>, GpError> {
        hybrid_predict(v_spme, &self.predict(x)?)
    }
}
