//! Simulation study: excitation profiles, surrogate truth data with biased
//! noise, randomized initial errors, and multi-trial experiments.

mod experiment;
mod truth;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{CellError, CurrentProfile};
use crate::estimator::EstimateError;

pub use experiment::{
    run_experiment, sample_initial_errors, Aggregate, BoundRule, ExperimentConfig, ExperimentReport, Failure,
    GroupSpec, InitialErrors, ParameterRow, RmseRow, TrialSeeds, TrialSpec,
};
pub use truth::{truth_generate, Dataset, DatasetSidecar, DiscrepancySpec, FineSettings, NoiseSpec, TruthMode, TruthSpec};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    /// Constant-current discharge.
    Cc,
    /// Square wave between the rate current and rest, 50% duty, starting high.
    Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    /// C-rate of the (high) current level.
    pub rate: f64,
    /// Square-wave frequency in Hz (pulse only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    pub duration: f64,
    #[serde(default = "one")]
    pub dt: f64,
}

fn one() -> f64 {
    1.0
}

impl ProfileSpec {
    pub fn cc(rate: f64, duration: f64, dt: f64) -> Self {
        Self { kind: ProfileKind::Cc, rate, frequency: None, duration, dt }
    }

    pub fn pulse(rate: f64, frequency: f64, duration: f64, dt: f64) -> Self {
        Self { kind: ProfileKind::Pulse, rate, frequency: Some(frequency), duration, dt }
    }

    pub fn samples(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.rate) && ok(self.duration) && ok(self.dt)) {
            return Err(ScenarioError::InvalidSpec(format!(
                "profile rate ({}), duration ({}) and dt ({}) must be positive",
                self.rate, self.duration, self.dt
            )));
        }
        if self.samples() == 0 {
            return Err(ScenarioError::InvalidSpec("profile has no samples".into()));
        }
        match (self.kind, self.frequency) {
            (ProfileKind::Pulse, Some(f)) if ok(f) => Ok(()),
            (ProfileKind::Pulse, f) => {
                Err(ScenarioError::InvalidSpec(format!("pulse frequency {f:?} must be positive")))
            }
            (ProfileKind::Cc, None) => Ok(()),
            (ProfileKind::Cc, Some(_)) => Err(ScenarioError::InvalidSpec("frequency is only valid for pulse".into())),
        }
    }
}

impl fmt::Display for ProfileSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.frequency) {
            (ProfileKind::Pulse, Some(freq)) if (1.0 / freq).fract() == 0.0 => {
                write!(f, "{}C pulse (1/{} Hz)", self.rate, 1.0 / freq)
            }
            (ProfileKind::Pulse, Some(freq)) => write!(f, "{}C pulse ({freq} Hz)", self.rate),
            _ => write!(f, "{}C discharge", self.rate),
        }
    }
}

/// Current samples for a profile; `capacity_ah` converts C-rate to amperes.
pub fn build_profile(spec: &ProfileSpec, capacity_ah: f64) -> Result<CurrentProfile, ScenarioError> {
    spec.validate()?;
    let level = spec.rate * capacity_ah;
    let n = spec.samples();
    let currents = match spec.kind {
        ProfileKind::Cc => vec![level; n],
        ProfileKind::Pulse => {
            let half_periods_per_s = 2.0 * spec.frequency.unwrap_or_default();
            (0..n)
                .map(|k| {
                    // Small offset keeps exact half-period boundaries from rounding down.
                    let phase = (k as f64 * spec.dt * half_periods_per_s + 1e-9).floor() as u64;
                    if phase % 2 == 0 {
                        level
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    Ok(CurrentProfile::new(spec.dt, currents)?)
}

/// Root-mean-square difference.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, ScenarioError> {
    if a.len() != b.len() {
        return Err(ScenarioError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(ScenarioError::InvalidSpec("rmse of empty vectors".into()));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// The three study profiles: 0.5C for 7000 s, 5C for 650 s, and a 1C
/// square wave at 1/60 Hz for 3600 s.
pub fn study_profiles() -> [ProfileSpec; 3] {
    [ProfileSpec::cc(0.5, 7000.0, 1.0), ProfileSpec::cc(5.0, 650.0, 1.0), ProfileSpec::pulse(1.0, 1.0 / 60.0, 3600.0, 1.0)]
}
