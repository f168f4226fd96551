use std::path::{Path, PathBuf};

use battcal::cell::{CellParameters, OcvSet, Parameter, SimOptions};
use battcal::estimator::{CovarianceMode, Objective, LENGTH_SCALE_BOUNDS};
use battcal::pso::SwarmConfig;
use battcal::scenario::{ProfileSpec, TruthSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub cell: Option<PathBuf>,
    pub ocv: Option<PathBuf>,
    #[serde(default = "one")]
    pub initial_soc: f64,
    /// Generated profile; exclusive with `profile_csv`.
    pub profile: Option<ProfileSpec>,
    /// CSV with `time_s,current_A` columns on a uniform grid.
    pub profile_csv: Option<PathBuf>,
    #[serde(default)]
    pub options: SimOptions,
}

/// Also accepts the sidecar written next to a dataset, so a sidecar replays
/// its own dataset.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    /// Replaces `truth.params` when set.
    pub cell: Option<PathBuf>,
    pub ocv: Option<PathBuf>,
    #[serde(default = "one")]
    pub initial_soc: f64,
    pub profile: ProfileSpec,
    #[serde(default)]
    pub truth: TruthSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub parameter: Parameter,
    /// Defaults to the plausibility box of the parameter.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub dataset: Option<PathBuf>,
    /// Starting values of all parameters.
    pub cell: Option<PathBuf>,
    pub ocv: Option<PathBuf>,
    pub objective: Objective,
    pub targets: Vec<TargetConfig>,
    #[serde(default = "default_downsample")]
    pub downsample: usize,
    #[serde(default = "default_sigma2_n_tilde")]
    pub sigma2_n_tilde: f64,
    #[serde(default = "one")]
    pub initial_soc: f64,
    #[serde(default)]
    pub covariance: CovarianceMode,
    #[serde(default = "default_length_scale_bounds")]
    pub length_scale_bounds: [f64; 2],
    #[serde(default)]
    pub swarm: SwarmConfig,
}

fn default_downsample() -> usize {
    300
}

fn default_sigma2_n_tilde() -> f64 {
    0.1
}

fn default_length_scale_bounds() -> [f64; 2] {
    [LENGTH_SCALE_BOUNDS.0, LENGTH_SCALE_BOUNDS.1]
}

/// Reads and parses a TOML file; errors name the file and the offending key.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Resolves `p` against the directory of the config file.
pub fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn load_cell(config: &Path, cell: Option<&PathBuf>) -> Result<Option<CellParameters>, CliError> {
    cell.map(|p| CellParameters::load(&resolve(config, p)).map_err(|e| CliError::Config(e.to_string()))).transpose()
}

pub fn load_ocv(config: &Path, ocv: Option<&PathBuf>) -> Result<OcvSet, CliError> {
    match ocv {
        Some(p) => OcvSet::load(&resolve(config, p)).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(OcvSet::default()),
    }
}
