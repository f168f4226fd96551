use std::io::Write;

use serde::{Deserialize, Serialize};

use super::model::{terminal_voltage_from_summary, CellState, Discretization, SpmeModel};
use super::params::CellParameters;
use super::{CellError, OcvSet};

/// Piecewise-constant current input, positive = discharge.
///
/// Sample `k` holds `currents[k]` over `(k·dt, (k+1)·dt]` and is stamped at
/// the end of that interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentProfile {
    pub dt: f64,
    pub currents: Vec<f64>,
}

impl CurrentProfile {
    pub fn new(dt: f64, currents: Vec<f64>) -> Result<Self, CellError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CellError::InvalidParameter(format!("profile dt {dt} must be positive")));
        }
        if let Some(i) = currents.iter().position(|c| !c.is_finite()) {
            return Err(CellError::InvalidParameter(format!("profile current at sample {i} is not finite")));
        }
        Ok(Self { dt, currents })
    }

    pub fn constant(current: f64, dt: f64, len: usize) -> Result<Self, CellError> {
        Self::new(dt, vec![current; len])
    }

    /// Builds a profile from `(time, current)` pairs; times must be uniformly spaced.
    pub fn from_samples(samples: &[(f64, f64)]) -> Result<Self, CellError> {
        let dt = match samples {
            [] => return Err(CellError::InvalidParameter("empty profile".into())),
            [(t, _)] => *t,
            [(t0, _), (t1, _), ..] => t1 - t0,
        };
        for (k, w) in samples.windows(2).enumerate() {
            let d = w[1].0 - w[0].0;
            if !(d > 0.0) {
                return Err(CellError::InvalidParameter(format!("times not increasing at sample {}", k + 1)));
            }
            if (d - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(CellError::InvalidParameter(format!(
                    "non-uniform sample period at sample {}: {d} vs {dt}",
                    k + 1
                )));
            }
        }
        Self::new(dt, samples.iter().map(|s| s.1).collect())
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    /// Charge drawn over the whole profile, A·h.
    pub fn throughput_ah(&self) -> f64 {
        self.currents.iter().sum::<f64>() * self.dt / 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageWindow {
    pub min: f64,
    pub max: f64,
}

impl Default for VoltageWindow {
    fn default() -> Self {
        Self { min: 2.5, max: 4.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub discretization: Discretization,
    /// Truncate when the voltage leaves this window. `None` runs the whole profile.
    pub cutoff: Option<VoltageWindow>,
    /// Internal steps per profile sample.
    pub substeps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { discretization: Discretization::default(), cutoff: Some(VoltageWindow::default()), substeps: 1 }
    }
}

impl SimOptions {
    /// Options used inside objective evaluations: no voltage cutoff.
    pub fn uncut() -> Self {
        Self { cutoff: None, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub current: f64,
    pub voltage: f64,
    pub soc_surf: f64,
    pub soc_bulk: f64,
    pub c_se_n: f64,
    pub c_se_p: f64,
    pub c_bar_n: f64,
    pub c_bar_p: f64,
    pub c_e_n: f64,
    pub c_e_p: f64,
}

/// Number of discrepancy-kernel inputs.
pub const FEATURE_DIM: usize = 4;

impl TrajectoryRecord {
    /// `[I, SOC_surf, SOC_bulk, c_e,n]`.
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        [self.current, self.soc_surf, self.soc_bulk, self.c_e_n]
    }
}

/// Free-function form of [`TrajectoryRecord::features`].
pub fn features(record: &TrajectoryRecord) -> [f64; FEATURE_DIM] {
    record.features()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// Set when the run stopped at the voltage cutoff.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.voltage).collect()
    }

    pub const CSV_HEADER: [&'static str; 7] =
        ["time_s", "current_A", "voltage_V", "soc_surf", "soc_bulk", "ce_n_mol_m3", "ce_p_mol_m3"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            w.write_record(
                [r.time, r.current, r.voltage, r.soc_surf, r.soc_bulk, r.c_e_n, r.c_e_p].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn record(
    state: &CellState,
    current: f64,
    params: &CellParameters,
    ocv: &OcvSet,
) -> Result<TrajectoryRecord, CellError> {
    let s = state.summary();
    let voltage = terminal_voltage_from_summary(&s, current, params, ocv)?;
    let a = &params.anode;
    Ok(TrajectoryRecord {
        time: state.time,
        current,
        voltage,
        soc_surf: a.soc_at_stoich(s.c_se_n / a.max_concentration),
        soc_bulk: a.soc_at_stoich(s.c_bar_n / a.max_concentration),
        c_se_n: s.c_se_n,
        c_se_p: s.c_se_p,
        c_bar_n: s.c_bar_n,
        c_bar_p: s.c_bar_p,
        c_e_n: s.c_e_n,
        c_e_p: s.c_e_p,
    })
}

/// Runs the SPMe through `profile` from a relaxed state at `initial_soc`.
///
/// Errors carry the index of the failing sample.
pub fn simulate(
    profile: &CurrentProfile,
    params: &CellParameters,
    ocv: &OcvSet,
    initial_soc: f64,
    options: &SimOptions,
) -> Result<Trajectory, CellError> {
    if !(0.0..=1.0).contains(&initial_soc) {
        return Err(CellError::InvalidParameter(format!("initial SOC {initial_soc} outside [0, 1]")));
    }
    let substeps = options.substeps.max(1);
    let h = profile.dt / substeps as f64;
    let mut model = SpmeModel::new(params, ocv, options.discretization)?;
    let mut state = CellState::equilibrium(params, options.discretization, initial_soc);
    let mut traj = Trajectory { records: Vec::with_capacity(profile.len()), truncated: false };
    for (k, &current) in profile.currents.iter().enumerate() {
        for _ in 0..substeps {
            model.step(&mut state, current, h).map_err(|e| e.at_step(k))?;
        }
        state.time = profile.time(k);
        let rec = record(&state, current, params, ocv).map_err(|e| e.at_step(k))?;
        if let Some(w) = options.cutoff {
            if rec.voltage < w.min || rec.voltage > w.max {
                traj.truncated = true;
                break;
            }
        }
        traj.records.push(rec);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_profile_gives_constant_ocv() {
        let p = CellParameters::default();
        let ocv = OcvSet::default();
        let profile = CurrentProfile::constant(0.0, 1.0, 50).unwrap();
        let traj = simulate(&profile, &p, &ocv, 0.7, &SimOptions::default()).unwrap();
        assert_eq!(traj.len(), 50);
        let expected = ocv.cathode.eval_unchecked(p.cathode.stoich_at_soc(0.7))
            - ocv.anode.eval_unchecked(p.anode.stoich_at_soc(0.7));
        for r in &traj.records {
            assert!((r.voltage - expected).abs() < 1e-12);
            assert_eq!(r.voltage, traj.records[0].voltage);
            assert!((r.soc_surf - r.soc_bulk).abs() < 1e-12);
        }
    }

    #[test]
    fn features_are_projection() {
        let r = TrajectoryRecord {
            time: 1.0,
            current: 2.0,
            voltage: 3.7,
            soc_surf: 0.8,
            soc_bulk: 0.81,
            c_se_n: 0.0,
            c_se_p: 0.0,
            c_bar_n: 0.0,
            c_bar_p: 0.0,
            c_e_n: 1000.0,
            c_e_p: 990.0,
        };
        assert_eq!(features(&r), [2.0, 0.8, 0.81, 1000.0]);
    }

    #[test]
    fn cutoff_truncates_with_flag() {
        let p = CellParameters::default();
        let ocv = OcvSet::default();
        let profile = CurrentProfile::constant(p.c_rate_current(1.0), 10.0, 400).unwrap();
        let traj = simulate(&profile, &p, &ocv, 0.2, &SimOptions::default()).unwrap();
        assert!(traj.truncated);
        assert!(traj.len() < 400);
        assert!(traj.records.iter().all(|r| r.voltage >= 2.5));
    }

    #[test]
    fn error_carries_step_index() {
        let p = CellParameters::default();
        let ocv = OcvSet::default();
        // Far past empty without a cutoff: the anode surface leaves the OCV domain.
        let profile = CurrentProfile::constant(p.c_rate_current(2.0), 10.0, 2000).unwrap();
        let err = simulate(&profile, &p, &ocv, 1.0, &SimOptions::uncut()).unwrap_err();
        match err {
            CellError::AtStep { step, .. } => assert!(step > 100 && step < 2000),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn from_samples_rejects_nonuniform() {
        assert!(CurrentProfile::from_samples(&[(1.0, 0.0), (2.0, 0.0), (3.5, 0.0)]).is_err());
        let p = CurrentProfile::from_samples(&[(2.0, 1.0), (4.0, 1.0)]).unwrap();
        assert_eq!(p.dt, 2.0);
    }
}
