//! Discrepancy-aware maximum-likelihood ("KOG") and least-squares parameter
//! estimation, and the grouped sequential procedure built on them.

mod error_vector;
mod group;
mod likelihood;
mod problem;

use thiserror::Error;

use crate::cell::CellError;
use crate::gp::GpError;
use crate::pso::{PsoError, TraceEntry};

pub use error_vector::{downsample, downsample_indices, model_error, ErrorVector};
pub use group::{
    estimate_group, sequential_estimate, write_trace_csv, EstimationResult, GroupRun, ParameterEstimate,
    SequentialOutcome,
};
pub use likelihood::{
    kog_value, log_likelihood, log_likelihood_from_objective, ls_value, profiled_log_likelihood, profiled_sigma2_f,
    QuadraticTerms,
};
pub use problem::{
    objective_kog, objective_ls, plausible_bounds, relative_bounds, CovarianceMode, EstimationProblem, KogEvaluation,
    Objective, Target, LENGTH_SCALE_BOUNDS,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EstimateError {
    #[error("invalid estimation problem: {0}")]
    InvalidProblem(String),
    #[error("measurement has {expected} samples but the simulation produced {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("cannot retain {requested} of {available} samples")]
    Downsample { requested: usize, available: usize },
    #[error("simulation failed: {0}")]
    Simulation(#[from] CellError),
    #[error("covariance: {0}")]
    Gp(#[from] GpError),
    #[error("optimizer: {0}")]
    Optimizer(#[from] PsoError),
    #[error("no feasible candidate in {evaluations} evaluations")]
    NoFeasible { evaluations: usize, trace: Vec<TraceEntry> },
    #[error("iteration {iteration}, group {group}: {source}")]
    InGroup { iteration: usize, group: usize, source: Box<EstimateError> },
}
