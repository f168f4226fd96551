use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_profile, rmse, study_profiles, ProfileSpec, ScenarioError, TruthSpec};
use crate::cell::{simulate, CellParameters, CurrentProfile, OcvSet, Parameter, SimOptions};
use crate::estimator::{
    plausible_bounds, relative_bounds, sequential_estimate, EstimationProblem, Objective, Target,
};
use crate::exec;
use crate::pso::SwarmConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub targets: Vec<Parameter>,
    pub profile: ProfileSpec,
}

/// How target search intervals are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundRule {
    /// Fixed per-parameter plausibility box.
    #[default]
    Plausible,
    /// `[0.25, 4]` times the perturbed starting value.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSpec {
    /// Magnitude range of the relative initial error; the sign is random.
    pub error_range: [f64; 2],
    /// Estimated in order, most sensitive first.
    pub groups: Vec<GroupSpec>,
    pub iterations: usize,
    pub downsample: usize,
    pub sigma2_n_tilde: f64,
    pub initial_soc: f64,
    /// Base seed; trial `t` uses stream `t` of this seed.
    pub seed: u64,
    pub bounds: BoundRule,
    pub objectives: Vec<Objective>,
    /// Profiles the fitted parameterizations are scored on.
    pub evaluation_profiles: Vec<ProfileSpec>,
    pub swarm: SwarmConfig,
}

impl Default for TrialSpec {
    fn default() -> Self {
        let [slow, fast, pulse] = study_profiles();
        Self {
            error_range: [0.5, 1.0],
            groups: vec![
                GroupSpec { targets: vec![Parameter::EpsSN, Parameter::EpsSP], profile: slow },
                GroupSpec { targets: vec![Parameter::DSN, Parameter::DSP], profile: fast },
                GroupSpec { targets: vec![Parameter::DE, Parameter::EpsE], profile: pulse },
            ],
            iterations: 3,
            downsample: 300,
            sigma2_n_tilde: 0.1,
            initial_soc: 1.0,
            seed: 0,
            bounds: BoundRule::Plausible,
            objectives: vec![Objective::Kog, Objective::Ls],
            evaluation_profiles: study_profiles().to_vec(),
            swarm: SwarmConfig::default(),
        }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let [lo, hi] = self.error_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(ScenarioError::InvalidSpec(format!("error_range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1")));
        }
        if self.groups.is_empty() || self.groups.iter().any(|g| g.targets.is_empty()) {
            return Err(ScenarioError::InvalidSpec("every group needs at least one target".into()));
        }
        if self.iterations == 0 || self.objectives.is_empty() {
            return Err(ScenarioError::InvalidSpec("iterations and objectives must be nonempty".into()));
        }
        for g in &self.groups {
            g.profile.validate()?;
        }
        for p in &self.evaluation_profiles {
            p.validate()?;
        }
        self.swarm.validate().map_err(|e| ScenarioError::InvalidSpec(e.to_string()))?;
        Ok(())
    }

    /// Distinct targets in group order.
    pub fn targets(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        for p in self.groups.iter().flat_map(|g| &g.targets) {
            if !out.contains(p) {
                out.push(*p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialErrors {
    pub params: CellParameters,
    /// Relative error applied to each target.
    pub errors: Vec<(Parameter, f64)>,
}

/// Multiplies each target by `1 + e` with `|e|` uniform in `range` and a
/// random sign. A volume fraction that would reach 1 takes the negative sign.
pub fn sample_initial_errors<R: Rng>(
    truth: &CellParameters,
    range: [f64; 2],
    targets: &[Parameter],
    rng: &mut R,
) -> InitialErrors {
    let mut params = truth.clone();
    let mut errors = Vec::with_capacity(targets.len());
    for &p in targets {
        let magnitude = if range[0] < range[1] { rng.gen_range(range[0]..range[1]) } else { range[0] };
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let e = clip_error(p, truth.get(p), sign * magnitude);
        params.set(p, truth.get(p) * (1.0 + e));
        errors.push((p, e));
    }
    InitialErrors { params, errors }
}

fn clip_error(p: Parameter, value: f64, e: f64) -> f64 {
    if p.is_volume_fraction() && value * (1.0 + e) >= 1.0 {
        -e.abs()
    } else {
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub trial: usize,
    pub objective: Objective,
    pub group: usize,
    pub parameter: Parameter,
    pub truth: f64,
    pub initial: f64,
    pub estimate: f64,
    pub initial_error_pct: f64,
    pub final_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub trial: usize,
    pub objective: Objective,
    pub profile: String,
    /// Against the noise-free truth, V.
    pub rmse_truth: f64,
    /// Against the noisy measurement, V.
    pub rmse_measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub trial: usize,
    pub base_seed: u64,
    pub stream: u64,
    pub swarm_seed: u64,
    /// One noise seed per group profile, then per evaluation profile.
    pub noise_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub trial: usize,
    pub objective: Objective,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub objective: Objective,
    pub parameter: Parameter,
    pub mean_error_pct: f64,
    /// Sample standard deviation, 0 for a single trial.
    pub std_error_pct: f64,
    pub mean_abs_error_pct: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub n_trials: usize,
    pub groups: Vec<GroupSpec>,
    pub objectives: Vec<Objective>,
    pub seeds: Vec<TrialSeeds>,
    pub parameters: Vec<ParameterRow>,
    pub rmse: Vec<RmseRow>,
    pub failures: Vec<Failure>,
    pub aggregates: Vec<Aggregate>,
}

/// Everything needed to replay an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_trials: usize,
    pub truth: TruthSpec,
    pub trial: TrialSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { n_trials: 8, truth: TruthSpec::default(), trial: TrialSpec::default() }
    }
}

struct ProfileData {
    spec: ProfileSpec,
    profile: CurrentProfile,
    truth: Vec<f64>,
}

impl ProfileData {
    fn new(spec: &ProfileSpec, truth: &TruthSpec, soc: f64, ocv: &OcvSet) -> Result<Self, ScenarioError> {
        let profile = build_profile(spec, truth.params.cell.nominal_capacity_ah)?;
        let (v, _) = truth.true_voltage(&profile, soc, ocv)?;
        Ok(Self { spec: *spec, profile, truth: v })
    }

    fn measured(&self, truth: &TruthSpec, seed: u64) -> Result<Vec<f64>, ScenarioError> {
        let noise = truth.noise.draw(self.truth.len(), seed)?;
        Ok(self.truth.iter().zip(noise).map(|(t, n)| t + n).collect())
    }
}

struct TrialOutcome {
    seeds: TrialSeeds,
    parameters: Vec<ParameterRow>,
    rmse: Vec<RmseRow>,
    failures: Vec<Failure>,
}

/// Runs `n_trials` seeded trials of the sequential estimation under every
/// objective. The noise-free truth is shared; each trial draws its own
/// initial errors, measurement noise and swarm seed from its stream.
pub fn run_experiment(truth: &TruthSpec, trial: &TrialSpec, n_trials: usize) -> Result<ExperimentReport, ScenarioError> {
    if n_trials == 0 {
        return Err(ScenarioError::InvalidSpec("n_trials must be >= 1".into()));
    }
    truth.validate()?;
    trial.validate()?;
    let ocv = OcvSet::default();
    let soc = trial.initial_soc;
    let group_data: Vec<ProfileData> =
        trial.groups.iter().map(|g| ProfileData::new(&g.profile, truth, soc, &ocv)).collect::<Result<_, _>>()?;
    let eval_data: Vec<ProfileData> = trial
        .evaluation_profiles
        .iter()
        .map(|p| ProfileData::new(p, truth, soc, &ocv))
        .collect::<Result<_, _>>()?;
    let trials: Vec<usize> = (0..n_trials).collect();
    // Trials and the particles inside each trial share one rayon pool.
    let outcomes = exec::map(&trials, trial.swarm.parallel, |&t| {
        run_trial(t, truth, trial, &group_data, &eval_data, &ocv)
    });
    let outcomes: Vec<TrialOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;

    let mut report = ExperimentReport {
        n_trials,
        groups: trial.groups.clone(),
        objectives: trial.objectives.clone(),
        seeds: vec![],
        parameters: vec![],
        rmse: vec![],
        failures: vec![],
        aggregates: vec![],
    };
    for o in outcomes {
        report.seeds.push(o.seeds);
        report.parameters.extend(o.parameters);
        report.rmse.extend(o.rmse);
        report.failures.extend(o.failures);
    }
    if !report.failures.is_empty() {
        log::warn!("{} trial runs failed and are excluded from the aggregates", report.failures.len());
    }
    report.aggregates = aggregate(&report.parameters, &trial.objectives, &trial.targets());
    Ok(report)
}

fn run_trial(
    t: usize,
    truth: &TruthSpec,
    spec: &TrialSpec,
    group_data: &[ProfileData],
    eval_data: &[ProfileData],
    ocv: &OcvSet,
) -> Result<TrialOutcome, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(t as u64);
    let init = sample_initial_errors(&truth.params, spec.error_range, &spec.targets(), &mut rng);
    let swarm_seed: u64 = rng.gen();
    let noise_seeds: Vec<u64> = (0..group_data.len() + eval_data.len()).map(|_| rng.gen()).collect();
    let group_meas: Vec<Vec<f64>> =
        group_data.iter().zip(&noise_seeds).map(|(d, s)| d.measured(truth, *s)).collect::<Result<_, _>>()?;
    let eval_meas: Vec<Vec<f64>> = eval_data
        .iter()
        .zip(&noise_seeds[group_data.len()..])
        .map(|(d, s)| d.measured(truth, *s))
        .collect::<Result<_, _>>()?;

    let mut out = TrialOutcome {
        seeds: TrialSeeds { trial: t, base_seed: spec.seed, stream: t as u64, swarm_seed, noise_seeds: noise_seeds.clone() },
        parameters: vec![],
        rmse: vec![],
        failures: vec![],
    };
    let swarm = SwarmConfig { seed: swarm_seed, ..spec.swarm };
    for &objective in &spec.objectives {
        let problems: Vec<EstimationProblem> = spec
            .groups
            .iter()
            .zip(group_data)
            .zip(&group_meas)
            .map(|((g, d), y)| {
                let targets = g
                    .targets
                    .iter()
                    .map(|&p| {
                        let b = match spec.bounds {
                            BoundRule::Plausible => plausible_bounds(p),
                            BoundRule::Relative => relative_bounds(p, init.params.get(p)),
                        };
                        Target::new(p, b)
                    })
                    .collect();
                let mut problem = EstimationProblem::new(
                    y.clone(),
                    d.profile.clone(),
                    targets,
                    init.params.clone(),
                    objective,
                    spec.initial_soc,
                );
                problem.ocv = ocv.clone();
                problem.downsample = spec.downsample.min(y.len());
                problem.sigma2_n_tilde = spec.sigma2_n_tilde;
                problem
            })
            .collect();
        let outcome = match sequential_estimate(&init.params, &problems, spec.iterations, &swarm) {
            Ok(o) => o,
            Err(e) => {
                out.failures.push(Failure { trial: t, objective, message: e.to_string() });
                continue;
            }
        };
        let fitted = &outcome.parameters;
        for (g, group) in spec.groups.iter().enumerate() {
            for &p in &group.targets {
                let (tv, iv, ev) = (truth.params.get(p), init.params.get(p), fitted.get(p));
                out.parameters.push(ParameterRow {
                    trial: t,
                    objective,
                    group: g,
                    parameter: p,
                    truth: tv,
                    initial: iv,
                    estimate: ev,
                    initial_error_pct: 100.0 * (iv - tv) / tv,
                    final_error_pct: 100.0 * (ev - tv) / tv,
                });
            }
        }
        for (d, y) in eval_data.iter().zip(&eval_meas) {
            let row = match simulate(&d.profile, fitted, ocv, spec.initial_soc, &SimOptions::uncut()) {
                Ok(traj) => {
                    let v = traj.voltages();
                    RmseRow {
                        trial: t,
                        objective,
                        profile: d.spec.to_string(),
                        rmse_truth: rmse(&v, &d.truth)?,
                        rmse_measured: rmse(&v, y)?,
                    }
                }
                Err(e) => {
                    log::warn!("trial {t} {objective}: {} not simulable with the fitted parameters: {e}", d.spec);
                    RmseRow { trial: t, objective, profile: d.spec.to_string(), rmse_truth: f64::NAN, rmse_measured: f64::NAN }
                }
            };
            out.rmse.push(row);
        }
    }
    Ok(out)
}

fn aggregate(rows: &[ParameterRow], objectives: &[Objective], targets: &[Parameter]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &p in targets {
        for &objective in objectives {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.objective == objective && r.parameter == p)
                .map(|r| r.final_error_pct)
                .collect();
            if errs.is_empty() {
                continue;
            }
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let std = if errs.len() > 1 {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let mean_abs = errs.iter().map(|e| e.abs()).sum::<f64>() / n;
            out.push(Aggregate { objective, parameter: p, mean_error_pct: mean, std_error_pct: std, mean_abs_error_pct: mean_abs, trials: errs.len() });
        }
    }
    out
}

impl ExperimentReport {
    pub fn aggregate(&self, objective: Objective, parameter: Parameter) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.objective == objective && a.parameter == parameter)
    }

    pub fn write_parameters_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "objective",
            "group",
            "parameter",
            "truth",
            "initial",
            "estimate",
            "initial_error_pct",
            "final_error_pct",
        ])?;
        for r in &self.parameters {
            w.write_record([
                r.trial.to_string(),
                r.objective.to_string(),
                (r.group + 1).to_string(),
                r.parameter.to_string(),
                r.truth.to_string(),
                r.initial.to_string(),
                r.estimate.to_string(),
                r.initial_error_pct.to_string(),
                r.final_error_pct.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_rmse_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "objective", "profile", "rmse_truth_V", "rmse_measured_V"])?;
        for r in &self.rmse {
            w.write_record([
                r.trial.to_string(),
                r.objective.to_string(),
                r.profile.clone(),
                r.rmse_truth.to_string(),
                r.rmse_measured.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_seeds_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "base_seed", "stream", "swarm_seed", "noise_seeds"])?;
        for s in &self.seeds {
            let noise: Vec<String> = s.noise_seeds.iter().map(u64::to_string).collect();
            w.write_record([
                s.trial.to_string(),
                s.base_seed.to_string(),
                s.stream.to_string(),
                s.swarm_seed.to_string(),
                noise.join(" "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text tables: per-trial errors, aggregate errors, and RMSE.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let label = |o: Objective| match o {
            Objective::Kog => "KOG",
            Objective::Ls => "LS",
        };
        for t in 0..self.n_trials {
            let _ = writeln!(s, "Trial {t}: estimation errors");
            let _ = write!(s, "{:<6} {:<22} {:<10} {:>10}", "Group", "Profile", "Parameter", "Initial");
            for &o in &self.objectives {
                let _ = write!(s, " {:>10}", label(o));
            }
            s.push('\n');
            for (g, group) in self.groups.iter().enumerate() {
                for &p in &group.targets {
                    let rows: Vec<&ParameterRow> =
                        self.parameters.iter().filter(|r| r.trial == t && r.parameter == p).collect();
                    let init = rows.first().map(|r| format!("{:.1}%", r.initial_error_pct)).unwrap_or_else(|| "-".into());
                    let _ = write!(s, "{:<6} {:<22} {:<10} {:>10}", g + 1, group.profile.to_string(), p, init);
                    for &o in &self.objectives {
                        let cell = rows
                            .iter()
                            .find(|r| r.objective == o)
                            .map(|r| format!("{:.2}%", r.final_error_pct))
                            .unwrap_or_else(|| "failed".into());
                        let _ = write!(s, " {cell:>10}");
                    }
                    s.push('\n');
                }
            }
            s.push('\n');
        }

        let _ = writeln!(s, "Estimation error mean and standard deviation over trials");
        let _ = write!(s, "{:<6} {:<10}", "Group", "Parameter");
        for &o in &self.objectives {
            let _ = write!(s, " {:>11}", format!("mean {}", label(o)));
        }
        for &o in &self.objectives {
            let _ = write!(s, " {:>11}", format!("std {}", label(o)));
        }
        s.push('\n');
        for (g, group) in self.groups.iter().enumerate() {
            for &p in &group.targets {
                let _ = write!(s, "{:<6} {:<10}", g + 1, p);
                for &o in &self.objectives {
                    let cell = self.aggregate(o, p).map(|a| format!("{:.2}%", a.mean_error_pct)).unwrap_or_else(|| "-".into());
                    let _ = write!(s, " {cell:>11}");
                }
                for &o in &self.objectives {
                    let cell = self.aggregate(o, p).map(|a| format!("{:.2}%", a.std_error_pct)).unwrap_or_else(|| "-".into());
                    let _ = write!(s, " {cell:>11}");
                }
                s.push('\n');
            }
        }
        s.push('\n');

        let _ = writeln!(s, "Voltage RMSE of the fitted model (mV, mean over trials)");
        let _ = writeln!(s, "{:<22} {:<6} {:>10} {:>12}", "Profile", "Obj", "vs truth", "vs measured");
        let mut profiles: Vec<&str> = Vec::new();
        for r in &self.rmse {
            if !profiles.contains(&r.profile.as_str()) {
                profiles.push(&r.profile);
            }
        }
        for prof in profiles {
            for &o in &self.objectives {
                let rows: Vec<&RmseRow> =
                    self.rmse.iter().filter(|r| r.profile == prof && r.objective == o && r.rmse_truth.is_finite()).collect();
                if rows.is_empty() {
                    continue;
                }
                let n = rows.len() as f64;
                let t = 1e3 * rows.iter().map(|r| r.rmse_truth).sum::<f64>() / n;
                let m = 1e3 * rows.iter().map(|r| r.rmse_measured).sum::<f64>() / n;
                let _ = writeln!(s, "{:<22} {:<6} {:>10.2} {:>12.2}", prof, label(o), t, m);
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "\n{} failed runs excluded:", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(s, "  trial {} {}: {}", f.trial, label(f.objective), f.message);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_lie_in_range_with_clipping() {
        let truth = CellParameters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let init = sample_initial_errors(&truth, [0.5, 1.0], &Parameter::ALL, &mut rng);
            for (p, e) in &init.errors {
                assert!((0.5..1.0).contains(&e.abs()), "{p}: {e}");
                assert!(init.params.get(*p) > 0.0);
                if p.is_volume_fraction() {
                    assert!(init.params.get(*p) < 1.0);
                }
            }
            init.params.validate().unwrap();
        }
    }

    #[test]
    fn reference_draw_pattern() {
        // A recorded draw: all within range, and the cathode fraction is
        // pushed past one by +93.5% when its true value is 0.6.
        let draws: [(Parameter, f64); 6] = [
            (Parameter::EpsSN, -0.959),
            (Parameter::EpsSP, 0.935),
            (Parameter::DSN, -0.759),
            (Parameter::DSP, -0.806),
            (Parameter::DE, 0.869),
            (Parameter::EpsE, 0.594),
        ];
        assert!(draws.iter().all(|(_, e)| (0.5..=1.0).contains(&e.abs())));
        let e = clip_error(Parameter::EpsSP, 0.6, 0.935);
        assert_eq!(e, -0.935);
        assert!(0.6 * (1.0 + e) < 1.0);
        assert_eq!(clip_error(Parameter::DSN, 1e-14, 0.935), 0.935);
    }

    #[test]
    fn aggregates_match_rows() {
        let row = |trial, e| ParameterRow {
            trial,
            objective: Objective::Ls,
            group: 0,
            parameter: Parameter::EpsSN,
            truth: 1.0,
            initial: 1.0,
            estimate: 1.0,
            initial_error_pct: 0.0,
            final_error_pct: e,
        };
        let a = aggregate(&[row(0, 1.0), row(1, 3.0), row(2, -1.0)], &[Objective::Ls], &[Parameter::EpsSN]);
        assert_eq!(a.len(), 1);
        assert!((a[0].mean_error_pct - 1.0).abs() < 1e-12);
        assert!((a[0].std_error_pct - 2.0).abs() < 1e-12);
        assert!((a[0].mean_abs_error_pct - 5.0 / 3.0).abs() < 1e-12);
        let single = aggregate(&[row(0, 4.0)], &[Objective::Ls], &[Parameter::EpsSN]);
        assert_eq!(single[0].std_error_pct, 0.0);
    }

    #[test]
    fn config_roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }
}
