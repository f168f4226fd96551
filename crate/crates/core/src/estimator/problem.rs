use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::error_vector::{downsample, model_error, ErrorVector};
use super::likelihood::{ls_value, QuadraticTerms};
use super::EstimateError;
use crate::cell::{simulate, CellParameters, CurrentProfile, Discretization, OcvSet, Parameter, SimOptions};
use crate::gp::{build_phi_n, SpdFactor, Standardizer};

/// Bounds on kernel length scales, in standardized feature units.
pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-2, 1e2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Discrepancy-aware profiled likelihood.
    Kog,
    /// Sum of squared errors.
    Ls,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Kog => "kog",
            Objective::Ls => "ls",
        })
    }
}

/// Covariance used by the KOG objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    #[default]
    Kernel,
    /// `Φ_n = (1 + σ̃²_n)·I`, the vanishing length-scale limit. The length
    /// scales drop out of the search.
    Identity,
}

/// One estimated parameter and its search interval in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub parameter: Parameter,
    pub lower: f64,
    pub upper: f64,
}

impl Target {
    pub fn new(parameter: Parameter, (lower, upper): (f64, f64)) -> Self {
        Self { parameter, lower, upper }
    }

    /// Search interval in optimizer coordinates.
    fn search_bounds(&self) -> (f64, f64) {
        if self.parameter.is_log_scaled() {
            (self.lower.log10(), self.upper.log10())
        } else {
            (self.lower, self.upper)
        }
    }

    fn from_search(&self, x: f64) -> f64 {
        let v = if self.parameter.is_log_scaled() { 10f64.powf(x) } else { x };
        v.clamp(self.lower, self.upper)
    }
}

/// Fixed plausibility box per parameter, independent of the starting guess.
pub fn plausible_bounds(p: Parameter) -> (f64, f64) {
    match p {
        Parameter::EpsSN | Parameter::EpsSP => (0.3, 0.95),
        Parameter::DSN | Parameter::DSP => (1e-16, 1e-12),
        Parameter::DE => (1e-11, 1e-8),
        Parameter::EpsE => (0.15, 0.8),
    }
}

/// `[0.25·x0, 4·x0]`, with volume fractions capped below one.
pub fn relative_bounds(p: Parameter, initial: f64) -> (f64, f64) {
    let lo = 0.25 * initial;
    let hi = 4.0 * initial;
    if p.is_volume_fraction() {
        (lo, hi.min(0.99))
    } else {
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem {
    pub measured: Vec<f64>,
    pub profile: CurrentProfile,
    pub targets: Vec<Target>,
    /// Values of every non-target parameter.
    pub fixed: CellParameters,
    pub ocv: OcvSet,
    pub objective: Objective,
    /// Number of retained samples M.
    pub downsample: usize,
    pub sigma2_n_tilde: f64,
    pub initial_soc: f64,
    pub length_scale_bounds: (f64, f64),
    pub covariance: CovarianceMode,
    pub discretization: Discretization,
}

/// Terms of one KOG evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KogEvaluation {
    pub j: f64,
    pub sigma2_f: f64,
    pub terms: QuadraticTerms,
}

impl EstimationProblem {
    /// Problem with default settings: M = 300, σ̃²_n = 0.1, default OCV.
    pub fn new(
        measured: Vec<f64>,
        profile: CurrentProfile,
        targets: Vec<Target>,
        fixed: CellParameters,
        objective: Objective,
        initial_soc: f64,
    ) -> Self {
        Self {
            measured,
            profile,
            targets,
            fixed,
            ocv: OcvSet::default(),
            objective,
            downsample: 300,
            sigma2_n_tilde: 0.1,
            initial_soc,
            length_scale_bounds: LENGTH_SCALE_BOUNDS,
            covariance: CovarianceMode::Kernel,
            discretization: Discretization::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        let bad = |m: String| Err(EstimateError::InvalidProblem(m));
        if self.targets.is_empty() {
            return bad("no target parameters".into());
        }
        for (i, t) in self.targets.iter().enumerate() {
            if self.targets[..i].iter().any(|u| u.parameter == t.parameter) {
                return bad(format!("{} listed twice", t.parameter));
            }
            if !(t.lower.is_finite() && t.upper.is_finite() && t.lower < t.upper) {
                return bad(format!("bounds for {}: [{}, {}] must be finite with lower < upper", t.parameter, t.lower, t.upper));
            }
            if t.lower <= 0.0 || (t.parameter.is_volume_fraction() && t.upper >= 1.0) {
                return bad(format!("bounds for {}: [{}, {}] leave the physical range", t.parameter, t.lower, t.upper));
            }
        }
        if self.measured.len() != self.profile.len() {
            return Err(EstimateError::LengthMismatch { expected: self.profile.len(), found: self.measured.len() });
        }
        if self.downsample == 0 || self.downsample > self.measured.len() {
            return Err(EstimateError::Downsample { requested: self.downsample, available: self.measured.len() });
        }
        if self.measured.iter().any(|v| !v.is_finite()) {
            return bad("measurements contain non-finite values".into());
        }
        if !(self.sigma2_n_tilde >= 0.0 && self.sigma2_n_tilde.is_finite()) {
            return bad(format!("sigma2_n_tilde = {} must be nonnegative", self.sigma2_n_tilde));
        }
        let (lo, hi) = self.length_scale_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("length scale bounds [{lo}, {hi}] are invalid"));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return bad(format!("initial SOC {} outside [0, 1]", self.initial_soc));
        }
        self.fixed.validate()?;
        self.discretization.validate()?;
        Ok(())
    }

    /// Whether length scales are part of the search.
    pub fn searches_length_scales(&self) -> bool {
        self.objective == Objective::Kog && self.covariance == CovarianceMode::Kernel
    }

    /// Optimizer box: targets (log10 for diffusivities), then log10 length scales.
    pub fn search_bounds(&self) -> Vec<(f64, f64)> {
        let mut b: Vec<(f64, f64)> = self.targets.iter().map(Target::search_bounds).collect();
        if self.searches_length_scales() {
            let (lo, hi) = self.length_scale_bounds;
            b.extend(std::iter::repeat((lo.log10(), hi.log10())).take(crate::cell::FEATURE_DIM));
        }
        b
    }

    /// Splits an optimizer point into physical θ and length scales.
    pub fn decode(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let k = self.targets.len();
        let theta = self.targets.iter().zip(x).map(|(t, v)| t.from_search(*v)).collect();
        let ls = self.searches_length_scales().then(|| x[k..].iter().map(|v| 10f64.powf(*v)).collect());
        (theta, ls)
    }

    /// The fixed snapshot with θ written into the target slots.
    pub fn parameters_at(&self, theta: &[f64]) -> Result<CellParameters, EstimateError> {
        if theta.len() != self.targets.len() {
            return Err(EstimateError::InvalidProblem(format!(
                "expected {} parameter values, got {}",
                self.targets.len(),
                theta.len()
            )));
        }
        let mut p = self.fixed.clone();
        for (t, v) in self.targets.iter().zip(theta) {
            p.set(t.parameter, *v);
        }
        p.validate()?;
        Ok(p)
    }

    /// Simulates at θ and returns the downsampled model error.
    pub fn error_at(&self, theta: &[f64]) -> Result<ErrorVector, EstimateError> {
        let params = self.parameters_at(theta)?;
        let options = SimOptions { discretization: self.discretization, ..SimOptions::uncut() };
        let traj = simulate(&self.profile, &params, &self.ocv, self.initial_soc, &options)?;
        downsample(&model_error(&self.measured, &traj)?, self.downsample)
    }

    /// `Φ_n` over the retained features, standardized on the same set.
    pub fn covariance_for(&self, err: &ErrorVector, length_scales: &[f64]) -> Result<DMatrix<f64>, EstimateError> {
        let n = err.len();
        match self.covariance {
            CovarianceMode::Identity => Ok(DMatrix::identity(n, n) * (1.0 + self.sigma2_n_tilde)),
            CovarianceMode::Kernel => {
                let z = Standardizer::fit(&err.features).apply(&err.features);
                Ok(build_phi_n(&z, length_scales, self.sigma2_n_tilde)?)
            }
        }
    }

    /// KOG objective terms at θ and length scales.
    pub fn evaluate_kog(&self, theta: &[f64], length_scales: &[f64]) -> Result<KogEvaluation, EstimateError> {
        let err = self.error_at(theta)?;
        self.kog_from_error(&err, length_scales)
    }

    pub(crate) fn kog_from_error(&self, err: &ErrorVector, length_scales: &[f64]) -> Result<KogEvaluation, EstimateError> {
        let phi = self.covariance_for(err, length_scales)?;
        let terms = QuadraticTerms::from_factor(&err.values, &SpdFactor::new(&phi)?)?;
        Ok(KogEvaluation { j: terms.objective(), sigma2_f: terms.sigma2_f(), terms })
    }
}

/// `J = |Φ_n|^(1/N)·εᵀΦ_n⁻¹ε` at θ and length scales.
pub fn objective_kog(problem: &EstimationProblem, theta: &[f64], length_scales: &[f64]) -> Result<f64, EstimateError> {
    Ok(problem.evaluate_kog(theta, length_scales)?.j)
}

/// `J = εᵀε` over the same retained samples as the KOG objective.
pub fn objective_ls(problem: &EstimationProblem, theta: &[f64]) -> Result<f64, EstimateError> {
    Ok(ls_value(&problem.error_at(theta)?.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::CellParameters;

    fn problem(objective: Objective) -> (EstimationProblem, f64) {
        let plant = CellParameters::default();
        let current = plant.c_rate_current(1.0);
        let profile = CurrentProfile::constant(current, 10.0, 60).unwrap();
        let traj = simulate(&profile, &plant, &OcvSet::default(), 0.9, &SimOptions::default()).unwrap();
        let truth = plant.anode.active_fraction;
        let mut p = EstimationProblem::new(
            traj.voltages(),
            profile,
            vec![Target::new(Parameter::EpsSN, plausible_bounds(Parameter::EpsSN))],
            plant,
            objective,
            0.9,
        );
        p.downsample = 30;
        (p, truth)
    }

    #[test]
    fn truth_gives_zero_objective() {
        let (p, truth) = problem(Objective::Kog);
        p.validate().unwrap();
        assert_eq!(objective_ls(&p, &[truth]).unwrap(), 0.0);
        assert_eq!(objective_kog(&p, &[truth], &[1.0; 4]).unwrap(), 0.0);
        assert!(objective_ls(&p, &[truth * 0.95]).unwrap() > 0.0);
    }

    #[test]
    fn identity_mode_matches_least_squares() {
        let (mut p, truth) = problem(Objective::Kog);
        p.covariance = CovarianceMode::Identity;
        let theta = [truth * 1.1];
        let kog = objective_kog(&p, &theta, &[]).unwrap();
        let ls = objective_ls(&p, &theta).unwrap();
        assert!((kog - ls).abs() <= 1e-12 * ls, "{kog} vs {ls}");
        assert_eq!(p.search_bounds().len(), 1);
    }

    #[test]
    fn search_space_layout() {
        let (mut p, _) = problem(Objective::Kog);
        p.targets.push(Target::new(Parameter::DSN, (1e-15, 1e-12)));
        let b = p.search_bounds();
        assert_eq!(b.len(), 6);
        assert_eq!(b[1], (-15.0, -12.0));
        assert_eq!(b[2], (-2.0, 2.0));
        let (theta, ls) = p.decode(&[0.5, -13.0, 0.0, 1.0, -1.0, 0.0]);
        assert!((theta[1] - 1e-13).abs() < 1e-27);
        let ls = ls.unwrap();
        assert!((ls[1] - 10.0).abs() < 1e-12 && (ls[2] - 0.1).abs() < 1e-14);
        p.objective = Objective::Ls;
        assert_eq!(p.search_bounds().len(), 2);
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let (p, _) = problem(Objective::Ls);
        let mut q = p.clone();
        q.downsample = 61;
        assert!(matches!(q.validate(), Err(EstimateError::Downsample { .. })));
        let mut q = p.clone();
        q.measured.pop();
        assert!(matches!(q.validate(), Err(EstimateError::LengthMismatch { .. })));
        let mut q = p.clone();
        q.targets[0].upper = q.targets[0].lower;
        assert!(q.validate().is_err());
        let mut q = p;
        q.targets.clear();
        assert!(q.validate().is_err());
    }

    #[test]
    fn relative_bounds_cap_fractions() {
        assert_eq!(relative_bounds(Parameter::EpsSN, 0.4), (0.1, 0.99));
        let (lo, hi) = relative_bounds(Parameter::DSN, 1e-14);
        assert!((lo - 2.5e-15).abs() < 1e-30 && (hi - 4e-14).abs() < 1e-28);
    }
}
