use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ProfileSpec, ScenarioError};
use crate::cell::{simulate, CellParameters, CurrentProfile, Discretization, OcvSet, SimOptions, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    /// SPMe on a refined grid with internal sub-stepping.
    FineSpme,
    /// Nominal SPMe plus the injected discrepancy.
    #[default]
    SpmePlusDiscrepancy,
}

/// Injected discrepancy `δ(I, s) = −A·tanh(I/I_ref)·σ((s_c − s)/w)`, where `s`
/// is the surface SOC, `σ` the logistic function and `I_ref` the current at
/// `reference_c_rate`.
///
/// Between consecutive samples `|Δδ| ≤ A·(|Δtanh(I/I_ref)| + |Δs|/(4w))`, so
/// along a constant-current segment the step change is at most
/// `A·|Δs|/(4w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrepancySpec {
    /// A, volts.
    pub amplitude: f64,
    /// SOC_surf at which the gate is half open; the default sits near the low-SOC knee.
    pub soc_center: f64,
    pub soc_width: f64,
    pub reference_c_rate: f64,
}

impl Default for DiscrepancySpec {
    fn default() -> Self {
        Self { amplitude: 0.020, soc_center: 0.2, soc_width: 0.05, reference_c_rate: 1.0 }
    }
}

impl DiscrepancySpec {
    pub fn eval(&self, current: f64, soc_surf: f64, reference_current: f64) -> f64 {
        let gate = 1.0 / (1.0 + (-(self.soc_center - soc_surf) / self.soc_width).exp());
        -self.amplitude * (current / reference_current).tanh() * gate
    }

    /// Per-step bound on `|Δδ|` for the given input increments.
    pub fn step_bound(&self, d_tanh: f64, d_soc: f64) -> f64 {
        self.amplitude * (d_tanh.abs() + d_soc.abs() / (4.0 * self.soc_width))
    }
}

/// Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
    /// Ignore `mean` and draw zero-mean noise.
    pub zero_mean: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { mean: 0.010, std: 0.010, seed: 0, zero_mean: false }
    }
}

impl NoiseSpec {
    pub fn effective_mean(&self) -> f64 {
        if self.zero_mean {
            0.0
        } else {
            self.mean
        }
    }

    /// `n` seeded draws.
    pub fn draw(&self, n: usize, seed: u64) -> Result<Vec<f64>, ScenarioError> {
        let dist = Normal::new(self.effective_mean(), self.std)
            .map_err(|e| ScenarioError::InvalidSpec(format!("noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineSettings {
    pub radial_nodes: usize,
    pub electrolyte_nodes_per_region: usize,
    pub substeps: usize,
}

impl Default for FineSettings {
    fn default() -> Self {
        Self { radial_nodes: 40, electrolyte_nodes_per_region: 30, substeps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub mode: TruthMode,
    pub discrepancy: DiscrepancySpec,
    pub noise: NoiseSpec,
    pub fine: FineSettings,
    /// True parameters.
    pub params: CellParameters,
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            mode: TruthMode::default(),
            discrepancy: DiscrepancySpec::default(),
            noise: NoiseSpec::default(),
            fine: FineSettings::default(),
            params: CellParameters::default(),
        }
    }
}

impl TruthSpec {
    /// Noise-free, discrepancy-free truth: measurements equal the nominal model.
    pub fn exact(params: CellParameters) -> Self {
        Self {
            mode: TruthMode::SpmePlusDiscrepancy,
            discrepancy: DiscrepancySpec { amplitude: 0.0, ..Default::default() },
            noise: NoiseSpec { mean: 0.0, std: 0.0, ..Default::default() },
            fine: FineSettings::default(),
            params,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let d = &self.discrepancy;
        let n = &self.noise;
        if ![d.amplitude, d.soc_center, n.mean, n.std].iter().all(|v| v.is_finite()) {
            return Err(ScenarioError::InvalidSpec("discrepancy and noise values must be finite".into()));
        }
        if !(d.soc_width > 0.0 && d.reference_c_rate > 0.0) {
            return Err(ScenarioError::InvalidSpec("discrepancy soc_width and reference_c_rate must be positive".into()));
        }
        if n.std < 0.0 {
            return Err(ScenarioError::InvalidSpec(format!("noise std = {} must be nonnegative", n.std)));
        }
        let f = &self.fine;
        Discretization { radial_nodes: f.radial_nodes, electrolyte_nodes_per_region: f.electrolyte_nodes_per_region }
            .validate()?;
        if f.substeps == 0 {
            return Err(ScenarioError::InvalidSpec("fine.substeps must be >= 1".into()));
        }
        self.params.validate()?;
        Ok(())
    }

    /// Noise-free true voltage and the trajectory it was derived from.
    pub fn true_voltage(
        &self,
        profile: &CurrentProfile,
        initial_soc: f64,
        ocv: &OcvSet,
    ) -> Result<(Vec<f64>, Trajectory), ScenarioError> {
        self.validate()?;
        match self.mode {
            TruthMode::FineSpme => {
                let options = SimOptions {
                    discretization: Discretization {
                        radial_nodes: self.fine.radial_nodes,
                        electrolyte_nodes_per_region: self.fine.electrolyte_nodes_per_region,
                    },
                    cutoff: None,
                    substeps: self.fine.substeps,
                };
                let traj = simulate(profile, &self.params, ocv, initial_soc, &options)?;
                Ok((traj.voltages(), traj))
            }
            TruthMode::SpmePlusDiscrepancy => {
                let traj = simulate(profile, &self.params, ocv, initial_soc, &SimOptions::uncut())?;
                let i_ref = self.params.c_rate_current(self.discrepancy.reference_c_rate);
                let v = traj
                    .records
                    .iter()
                    .map(|r| r.voltage + self.discrepancy.eval(r.current, r.soc_surf, i_ref))
                    .collect();
                Ok((v, traj))
            }
        }
    }
}

/// Truth and measurement voltages for one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub time: Vec<f64>,
    pub current: Vec<f64>,
    pub truth: Vec<f64>,
    pub measured: Vec<f64>,
}

impl Dataset {
    pub const CSV_HEADER: [&'static str; 4] = ["time_s", "current_A", "voltage_true_V", "voltage_meas_V"];

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn profile(&self) -> Result<CurrentProfile, ScenarioError> {
        let samples: Vec<(f64, f64)> = self.time.iter().copied().zip(self.current.iter().copied()).collect();
        Ok(CurrentProfile::from_samples(&samples)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for k in 0..self.len() {
            w.write_record(
                [self.time[k], self.current[k], self.truth[k], self.measured[k]].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.iter().collect::<Vec<_>>() != Self::CSV_HEADER {
            return Err(format!("expected columns {:?}, found {:?}", Self::CSV_HEADER, header.iter().collect::<Vec<_>>()));
        }
        let mut d = Dataset { time: vec![], current: vec![], truth: vec![], measured: vec![] };
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let mut vals = [0.0; 4];
            for (j, v) in vals.iter_mut().enumerate() {
                let field = rec.get(j).ok_or_else(|| format!("row {}: missing {}", line + 1, Self::CSV_HEADER[j]))?;
                *v = field
                    .trim()
                    .parse()
                    .map_err(|_| format!("row {}: {} = {field:?} is not a number", line + 1, Self::CSV_HEADER[j]))?;
            }
            d.time.push(vals[0]);
            d.current.push(vals[1]);
            d.truth.push(vals[2]);
            d.measured.push(vals[3]);
        }
        if d.is_empty() {
            return Err("dataset has no rows".into());
        }
        Ok(d)
    }
}

/// Settings needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub initial_soc: f64,
    pub profile: ProfileSpec,
    pub truth: TruthSpec,
}

/// Simulates the truth and adds seeded noise (stream seeded by `spec.noise.seed`).
pub fn truth_generate(
    spec: &TruthSpec,
    profile: &CurrentProfile,
    initial_soc: f64,
    ocv: &OcvSet,
) -> Result<Dataset, ScenarioError> {
    let (truth, traj) = spec.true_voltage(profile, initial_soc, ocv)?;
    let noise = spec.noise.draw(truth.len(), spec.noise.seed)?;
    Ok(Dataset {
        time: traj.records.iter().map(|r| r.time).collect(),
        current: profile.currents.clone(),
        measured: truth.iter().zip(&noise).map(|(t, n)| t + n).collect(),
        truth,
    })
}
