//! Global-best particle swarm minimizer over a bounded box.
//!
//! Random numbers for an iteration are drawn from one seeded stream before the
//! particles are evaluated, so parallel evaluation gives the same trace as a
//! sequential run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PsoError {
    #[error("invalid swarm configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid bounds for dimension {dim}: [{lo}, {hi}]")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("objective returned non-finite value {value} at {point:?}")]
    ContractViolation { point: Vec<f64>, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Maximum speed per dimension as a fraction of the box width.
    pub velocity_clamp: f64,
    pub seed: u64,
    /// Evaluate particles on the rayon pool (needs the `parallel` feature).
    pub parallel: bool,
    /// Infeasible points score `penalty_factor × median feasible value` of the
    /// first iteration that had feasible points.
    pub penalty_factor: f64,
    /// Penalty used before any feasible point has been seen.
    pub penalty_fallback: f64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            particles: 40,
            iterations: 150,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            velocity_clamp: 0.5,
            seed: 0,
            parallel: true,
            penalty_factor: 1e6,
            penalty_fallback: 1e12,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), PsoError> {
        let bad = |msg: String| Err(PsoError::InvalidConfig(msg));
        if self.particles < 1 || self.iterations < 1 {
            return bad(format!("particles ({}) and iterations ({}) must be >= 1", self.particles, self.iterations));
        }
        for (name, v) in [("inertia", self.inertia), ("cognitive", self.cognitive), ("social", self.social)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be >= 0"));
            }
        }
        if !(self.velocity_clamp > 0.0 && self.velocity_clamp <= 1.0) {
            return bad(format!("velocity_clamp = {} must lie in (0, 1]", self.velocity_clamp));
        }
        if !(self.penalty_factor > 0.0 && self.penalty_fallback > 0.0) {
            return bad("penalty settings must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Swarm-best objective after this iteration.
    pub best: f64,
    /// Mean of the feasible values evaluated in this iteration.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// One entry per iteration, excluding the initial evaluation.
    pub trace: Vec<TraceEntry>,
    /// Whether `best_value` came from a feasible evaluation.
    pub best_feasible: bool,
    /// Penalty assigned to infeasible points (the last value in force).
    pub penalty: f64,
    /// Largest feasible objective seen, `-inf` if none.
    pub max_feasible: f64,
    pub evaluations: usize,
    pub infeasible_evaluations: usize,
}

struct PenaltyPolicy {
    factor: f64,
    fallback: f64,
    value: Option<f64>,
}

impl PenaltyPolicy {
    fn current(&self) -> f64 {
        self.value.unwrap_or(self.fallback)
    }

    fn observe(&mut self, feasible: &[f64]) {
        if self.value.is_none() && !feasible.is_empty() {
            let mut v = feasible.to_vec();
            v.sort_by(|a, b| a.total_cmp(b));
            let mid = v.len() / 2;
            let median = if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] };
            // A zero median would make infeasible points free.
            let scale = if median > 0.0 { median } else { v.iter().copied().fold(0.0, f64::max) };
            if scale > 0.0 {
                self.value = Some(self.factor * scale);
            }
        }
    }
}

/// Minimizes `f` over the box `bounds`. `f` returns `None` for infeasible
/// points, which are scored with the penalty.
pub fn pso_minimize<F>(f: F, bounds: &[(f64, f64)], config: &SwarmConfig) -> Result<SwarmResult, PsoError>
where
    F: Fn(&[f64]) -> Option<f64> + Sync + Send,
{
    config.validate()?;
    if bounds.is_empty() {
        return Err(PsoError::InvalidConfig("no search dimensions".into()));
    }
    for (dim, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(PsoError::InvalidBounds { dim, lo, hi });
        }
    }
    let d = bounds.len();
    let n = config.particles;
    let vmax: Vec<f64> = bounds.iter().map(|(lo, hi)| config.velocity_clamp * (hi - lo)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut positions: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            bounds
                .iter()
                .map(|&(lo, hi)| if p == 0 { 0.5 * (lo + hi) } else { rng.gen_range(lo..=hi) })
                .collect()
        })
        .collect();
    let mut velocities: Vec<Vec<f64>> =
        (0..n).map(|_| vmax.iter().map(|&v| rng.gen_range(-v..=v)).collect()).collect();

    let mut penalty = PenaltyPolicy { factor: config.penalty_factor, fallback: config.penalty_fallback, value: None };
    let mut stats = Stats { evaluations: 0, infeasible: 0, max_feasible: f64::NEG_INFINITY };

    let raw = evaluate(&f, &positions, config.parallel, &mut stats)?;
    let (values, _) = resolve(&raw, &mut penalty);
    let mut pbest = positions.clone();
    let mut pbest_val = values.clone();
    let mut pbest_feasible: Vec<bool> = raw.iter().map(Option::is_some).collect();
    let (gbest_idx, _) = argmin(&pbest_val);
    let mut gbest = pbest[gbest_idx].clone();
    let mut gbest_val = pbest_val[gbest_idx];
    let mut gbest_feasible = pbest_feasible[gbest_idx];

    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        for p in 0..n {
            for j in 0..d {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let x = positions[p][j];
                let mut v = config.inertia * velocities[p][j]
                    + config.cognitive * r1 * (pbest[p][j] - x)
                    + config.social * r2 * (gbest[j] - x);
                v = v.clamp(-vmax[j], vmax[j]);
                let (lo, hi) = bounds[j];
                let mut nx = x + v;
                if nx < lo || nx > hi {
                    nx = nx.clamp(lo, hi);
                    v = 0.0;
                }
                positions[p][j] = nx;
                velocities[p][j] = v;
            }
        }

        let raw = evaluate(&f, &positions, config.parallel, &mut stats)?;
        let (values, mean) = resolve(&raw, &mut penalty);
        for p in 0..n {
            if values[p] < pbest_val[p] {
                pbest_val[p] = values[p];
                pbest[p].clone_from(&positions[p]);
                pbest_feasible[p] = raw[p].is_some();
            }
        }
        let (idx, val) = argmin(&pbest_val);
        if val < gbest_val {
            gbest_val = val;
            gbest.clone_from(&pbest[idx]);
            gbest_feasible = pbest_feasible[idx];
        }
        trace.push(TraceEntry { iteration, best: gbest_val, mean: mean.unwrap_or(penalty.current()) });
    }

    Ok(SwarmResult {
        best_point: gbest,
        best_value: gbest_val,
        trace,
        best_feasible: gbest_feasible,
        penalty: penalty.current(),
        max_feasible: stats.max_feasible,
        evaluations: stats.evaluations,
        infeasible_evaluations: stats.infeasible,
    })
}

struct Stats {
    evaluations: usize,
    infeasible: usize,
    max_feasible: f64,
}

fn evaluate<F>(f: &F, positions: &[Vec<f64>], parallel: bool, stats: &mut Stats) -> Result<Vec<Option<f64>>, PsoError>
where
    F: Fn(&[f64]) -> Option<f64> + Sync + Send,
{
    let raw = exec::map(positions, parallel, |x| f(x));
    stats.evaluations += raw.len();
    for (x, r) in positions.iter().zip(&raw) {
        match r {
            Some(v) if !v.is_finite() => {
                return Err(PsoError::ContractViolation { point: x.clone(), value: *v });
            }
            Some(v) => stats.max_feasible = stats.max_feasible.max(*v),
            None => stats.infeasible += 1,
        }
    }
    Ok(raw)
}

/// Replaces infeasible entries with the penalty; returns the feasible mean.
fn resolve(raw: &[Option<f64>], penalty: &mut PenaltyPolicy) -> (Vec<f64>, Option<f64>) {
    let feasible: Vec<f64> = raw.iter().flatten().copied().collect();
    penalty.observe(&feasible);
    let p = penalty.current();
    let mean = (!feasible.is_empty()).then(|| feasible.iter().sum::<f64>() / feasible.len() as f64);
    (raw.iter().map(|r| r.unwrap_or(p)).collect(), mean)
}

fn argmin(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
}
