use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellError, Electrode};

const DEFAULT_OCV: &str = include_str!("../../data/ocv_default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpTerm {
    pub amplitude: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TanhTerm {
    pub amplitude: f64,
    pub slope: f64,
    pub center: f64,
}

/// Open-circuit potential of one electrode as a function of stoichiometry.
///
/// `U(s) = constant + linear·s + Σ a·exp(r·s) + Σ a·tanh(k·(s − c))`,
/// defined on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcvCurve {
    pub constant: f64,
    #[serde(default)]
    pub linear: f64,
    #[serde(default)]
    pub exp_terms: Vec<ExpTerm>,
    #[serde(default)]
    pub tanh_terms: Vec<TanhTerm>,
}

impl OcvCurve {
    /// Evaluates without a domain check.
    #[inline]
    pub fn eval_unchecked(&self, s: f64) -> f64 {
        let mut u = self.constant + self.linear * s;
        for t in &self.exp_terms {
            u += t.amplitude * (t.rate * s).exp();
        }
        for t in &self.tanh_terms {
            u += t.amplitude * (t.slope * (s - t.center)).tanh();
        }
        u
    }

    pub fn eval(&self, s: f64, electrode: Electrode) -> Result<f64, CellError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(CellError::OcvDomain { electrode, stoichiometry: s });
        }
        Ok(self.eval_unchecked(s))
    }

    /// dU/ds, analytic.
    pub fn slope(&self, s: f64) -> f64 {
        let mut d = self.linear;
        for t in &self.exp_terms {
            d += t.amplitude * t.rate * (t.rate * s).exp();
        }
        for t in &self.tanh_terms {
            let th = (t.slope * (s - t.center)).tanh();
            d += t.amplitude * t.slope * (1.0 - th * th);
        }
        d
    }
}

/// Open-circuit potential pair for the two electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcvSet {
    pub anode: OcvCurve,
    pub cathode: OcvCurve,
}

impl Default for OcvSet {
    fn default() -> Self {
        toml::from_str(DEFAULT_OCV).expect("shipped OCV fits parse")
    }
}

impl OcvSet {
    pub fn from_toml_str(s: &str) -> Result<Self, CellError> {
        let set: Self = toml::from_str(s).map_err(|e| CellError::Config(e.to_string()))?;
        for (curve, name) in [(&set.anode, "anode"), (&set.cathode, "cathode")] {
            for k in 0..=100 {
                if !curve.eval_unchecked(k as f64 / 100.0).is_finite() {
                    return Err(CellError::Config(format!("{name} OCV is not finite on [0, 1]")));
                }
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, CellError> {
        let text = std::fs::read_to_string(path).map_err(|e| CellError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("OCV set serializes")
    }

    pub fn curve(&self, electrode: Electrode) -> &OcvCurve {
        match electrode {
            Electrode::Anode => &self.anode,
            Electrode::Cathode => &self.cathode,
        }
    }
}
