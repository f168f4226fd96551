//! Reduced-order electrochemical cell model (SPMe).

mod model;
mod ocv;
mod params;
mod simulate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{
    sphere_mean, step, terminal_voltage, terminal_voltage_from_summary, CellState, Discretization, SpmeModel,
    StateSummary,
};
pub use ocv::{ExpTerm, OcvCurve, OcvSet, TanhTerm};
pub use params::{
    CellConstants, CellParameters, ElectrodeParameters, ElectrolyteParameters, Parameter, SeparatorParameters,
    FARADAY, GAS_CONSTANT,
};
pub use simulate::{
    features, simulate, CurrentProfile, SimOptions, Trajectory, TrajectoryRecord, VoltageWindow, FEATURE_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Electrode {
    Anode,
    Cathode,
}

impl fmt::Display for Electrode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Electrode::Anode => "anode",
            Electrode::Cathode => "cathode",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CellError {
    #[error("invalid cell parameter: {0}")]
    InvalidParameter(String),
    #[error("{electrode} surface stoichiometry {stoichiometry} outside the OCV domain [0, 1]")]
    OcvDomain { electrode: Electrode, stoichiometry: f64 },
    #[error("{electrode} overpotential singular: {detail}")]
    Singularity { electrode: Electrode, detail: String },
    #[error("integration produced non-finite concentrations at step {step}")]
    IntegrationFailure { step: usize },
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<CellError>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl CellError {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            CellError::IntegrationFailure { .. } => CellError::IntegrationFailure { step },
            CellError::AtStep { source, .. } => CellError::AtStep { step, source },
            other => CellError::AtStep { step, source: Box::new(other) },
        }
    }
}
