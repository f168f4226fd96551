use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::likelihood::ls_value;
use super::problem::{EstimationProblem, Objective};
use super::EstimateError;
use crate::cell::{CellParameters, Parameter};
use crate::pso::{pso_minimize, SwarmConfig, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub parameter: Parameter,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub objective: Objective,
    pub estimates: Vec<ParameterEstimate>,
    /// Fitted kernel length scales (KOG with kernel covariance only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_scales: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2_n_tilde: Option<f64>,
    /// Profiled scale factor at the returned point (KOG only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2_f: Option<f64>,
    pub objective_value: f64,
    /// Retained sample count the objective was computed over.
    pub samples: usize,
    pub penalty: f64,
    pub max_feasible: f64,
    pub evaluations: usize,
    pub infeasible_evaluations: usize,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

impl EstimationResult {
    pub fn value(&self, p: Parameter) -> Option<f64> {
        self.estimates.iter().find(|e| e.parameter == p).map(|e| e.value)
    }

    pub fn apply_to(&self, params: &mut CellParameters) {
        for e in &self.estimates {
            params.set(e.parameter, e.value);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("estimation result serializes")
    }
}

/// Writes `iteration,best_J,mean_J`.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "best_J", "mean_J"])?;
    for t in trace {
        w.write_record([t.iteration.to_string(), t.best.to_string(), t.mean.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Minimizes the problem's objective with the particle swarm.
///
/// Candidates whose simulation or factorization fails are infeasible and
/// receive the swarm penalty.
pub fn estimate_group(problem: &EstimationProblem, swarm: &SwarmConfig) -> Result<EstimationResult, EstimateError> {
    problem.validate()?;
    let start = Instant::now();
    let bounds = problem.search_bounds();
    let f = |x: &[f64]| -> Option<f64> {
        let (theta, ls) = problem.decode(x);
        let value = match problem.objective {
            Objective::Ls => problem.error_at(&theta).map(|e| ls_value(&e.values)),
            Objective::Kog => {
                let ls = ls.unwrap_or_default();
                problem.error_at(&theta).and_then(|e| problem.kog_from_error(&e, &ls)).map(|k| k.j)
            }
        };
        value.ok().filter(|v| v.is_finite())
    };
    let run = pso_minimize(f, &bounds, swarm)?;
    if !run.best_feasible {
        return Err(EstimateError::NoFeasible { evaluations: run.evaluations, trace: run.trace });
    }

    let (theta, ls) = problem.decode(&run.best_point);
    let (objective_value, sigma2_f) = match problem.objective {
        Objective::Ls => (ls_value(&problem.error_at(&theta)?.values), None),
        Objective::Kog => {
            let k = problem.evaluate_kog(&theta, ls.as_deref().unwrap_or_default())?;
            (k.j, Some(k.sigma2_f))
        }
    };
    let kog = problem.objective == Objective::Kog;
    Ok(EstimationResult {
        objective: problem.objective,
        estimates: problem
            .targets
            .iter()
            .zip(theta)
            .map(|(t, value)| ParameterEstimate { parameter: t.parameter, value })
            .collect(),
        length_scales: ls,
        sigma2_n_tilde: kog.then_some(problem.sigma2_n_tilde),
        sigma2_f,
        objective_value,
        samples: problem.downsample,
        penalty: run.penalty,
        max_feasible: run.max_feasible,
        evaluations: run.evaluations,
        infeasible_evaluations: run.infeasible_evaluations,
        wall_time_s: start.elapsed().as_secs_f64(),
        trace: run.trace,
    })
}

/// One group estimation inside a sequential pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRun {
    pub iteration: usize,
    pub group: usize,
    /// Snapshot the group started from.
    pub initial: CellParameters,
    pub result: EstimationResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialOutcome {
    pub runs: Vec<GroupRun>,
    pub parameters: CellParameters,
}

impl SequentialOutcome {
    /// Last estimate of every parameter that was a target somewhere.
    pub fn final_estimates(&self) -> Vec<ParameterEstimate> {
        let mut out: Vec<ParameterEstimate> = Vec::new();
        for run in &self.runs {
            for e in &run.result.estimates {
                match out.iter_mut().find(|o| o.parameter == e.parameter) {
                    Some(o) => o.value = e.value,
                    None => out.push(*e),
                }
            }
        }
        out
    }
}

/// Estimates the groups in order, `iterations` times over, carrying every
/// group's estimates into the snapshot used by the groups after it.
///
/// Each problem's `fixed` field is replaced by the running snapshot, which
/// starts at `initial`. Run `r` (counting across iterations) uses swarm seed
/// `swarm.seed + r`.
pub fn sequential_estimate(
    initial: &CellParameters,
    groups: &[EstimationProblem],
    iterations: usize,
    swarm: &SwarmConfig,
) -> Result<SequentialOutcome, EstimateError> {
    if groups.is_empty() || iterations == 0 {
        return Err(EstimateError::InvalidProblem("need at least one group and one iteration".into()));
    }
    let mut snapshot = initial.clone();
    let mut runs = Vec::with_capacity(groups.len() * iterations);
    for iteration in 0..iterations {
        for (g, problem) in groups.iter().enumerate() {
            let r = runs.len() as u64;
            let mut problem = problem.clone();
            problem.fixed = snapshot.clone();
            let config = SwarmConfig { seed: swarm.seed.wrapping_add(r), ..*swarm };
            let result = estimate_group(&problem, &config)
                .map_err(|e| EstimateError::InGroup { iteration, group: g, source: Box::new(e) })?;
            log::debug!("iteration {iteration} group {g}: J = {:.6e}", result.objective_value);
            let before = snapshot.clone();
            result.apply_to(&mut snapshot);
            runs.push(GroupRun { iteration, group: g, initial: before, result });
        }
    }
    Ok(SequentialOutcome { runs, parameters: snapshot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{simulate, CurrentProfile, OcvSet, SimOptions};
    use crate::estimator::{plausible_bounds, CovarianceMode, Target};

    fn data(plant: &CellParameters) -> (CurrentProfile, Vec<f64>) {
        let profile = CurrentProfile::constant(plant.c_rate_current(1.0), 20.0, 150).unwrap();
        let traj = simulate(&profile, plant, &OcvSet::default(), 1.0, &SimOptions::default()).unwrap();
        assert!(!traj.truncated);
        (profile, traj.voltages())
    }

    fn eps_s_n_problem(objective: Objective) -> (EstimationProblem, f64) {
        let plant = CellParameters::default();
        let (profile, y) = data(&plant);
        let truth = plant.anode.active_fraction;
        let start = plant.clone().with(Parameter::EpsSN, 0.5);
        let mut p = EstimationProblem::new(
            y,
            profile,
            vec![Target::new(Parameter::EpsSN, plausible_bounds(Parameter::EpsSN))],
            start,
            objective,
            1.0,
        );
        p.downsample = 100;
        (p, truth)
    }

    fn swarm() -> SwarmConfig {
        SwarmConfig { particles: 12, iterations: 30, seed: 3, ..Default::default() }
    }

    #[test]
    fn least_squares_recovers_active_fraction() {
        let (p, truth) = eps_s_n_problem(Objective::Ls);
        let r = estimate_group(&p, &swarm()).unwrap();
        let est = r.value(Parameter::EpsSN).unwrap();
        assert!((est / truth - 1.0).abs() < 5e-3, "{est} vs {truth}");
        assert!(r.sigma2_f.is_none() && r.length_scales.is_none());
        assert!(r.trace.windows(2).all(|w| w[1].best <= w[0].best));
    }

    #[test]
    fn kog_recovers_active_fraction() {
        let (p, truth) = eps_s_n_problem(Objective::Kog);
        let r = estimate_group(&p, &SwarmConfig { iterations: 60, ..swarm() }).unwrap();
        let est = r.value(Parameter::EpsSN).unwrap();
        assert!((est / truth - 1.0).abs() < 5e-3, "{est} vs {truth}");
        assert_eq!(r.length_scales.as_ref().unwrap().len(), 4);
        assert!(r.sigma2_f.unwrap() >= 0.0);
        assert_eq!(r.sigma2_n_tilde, Some(0.1));
    }

    #[test]
    fn identity_covariance_matches_least_squares_argmin() {
        let (ls, _) = eps_s_n_problem(Objective::Ls);
        let (mut kog, _) = eps_s_n_problem(Objective::Kog);
        kog.covariance = CovarianceMode::Identity;
        let a = estimate_group(&ls, &swarm()).unwrap().value(Parameter::EpsSN).unwrap();
        let b = estimate_group(&kog, &swarm()).unwrap().value(Parameter::EpsSN).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn all_infeasible_is_an_error() {
        let (mut p, _) = eps_s_n_problem(Objective::Ls);
        // Far too little active material: the anode empties within the run.
        p.targets[0] = Target::new(Parameter::EpsSN, (0.01, 0.02));
        let err = estimate_group(&p, &SwarmConfig { particles: 4, iterations: 2, ..Default::default() }).unwrap_err();
        assert!(matches!(err, EstimateError::NoFeasible { .. }), "{err}");
    }

    #[test]
    fn sequential_bookkeeping() {
        let (p, _) = eps_s_n_problem(Objective::Ls);
        let cfg = SwarmConfig { particles: 6, iterations: 5, ..swarm() };
        let single = estimate_group(&p, &cfg).unwrap();
        let seq = sequential_estimate(&p.fixed, std::slice::from_ref(&p), 1, &cfg).unwrap();
        assert_eq!(seq.runs.len(), 1);
        let mut a = seq.runs[0].result.clone();
        a.wall_time_s = single.wall_time_s;
        assert_eq!(a, single);

        let mut q = p.clone();
        q.targets = vec![Target::new(Parameter::EpsSP, plausible_bounds(Parameter::EpsSP))];
        let two = sequential_estimate(&p.fixed, &[p.clone(), q], 2, &cfg).unwrap();
        assert_eq!(two.runs.len(), 4);
        assert_eq!(two.runs[2].initial, {
            let mut s = p.fixed.clone();
            two.runs[0].result.apply_to(&mut s);
            two.runs[1].result.apply_to(&mut s);
            s
        });
        assert_eq!(two.runs[1].initial.anode.active_fraction, two.runs[0].result.estimates[0].value);
        assert_eq!(two.final_estimates().len(), 2);
    }

    #[test]
    fn trace_csv_columns() {
        let mut buf = Vec::new();
        write_trace_csv(&[TraceEntry { iteration: 0, best: 1.5, mean: 2.0 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,best_J,mean_J\n0,1.5,2\n");
    }
}
