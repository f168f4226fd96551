//! Single particle model with electrolyte dynamics.
//!
//! Solid diffusion in each particle uses a vertex-centred finite-volume grid
//! (node 0 at the centre, the last node on the surface) and electrolyte
//! diffusion a cell-centred grid over anode, separator and cathode. Both are
//! advanced with implicit Euler, which keeps the discrete lithium inventory
//! exact up to round-off.

use serde::{Deserialize, Serialize};

use super::params::{CellParameters, FARADAY};
use super::{CellError, Electrode, OcvSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    pub radial_nodes: usize,
    pub electrolyte_nodes_per_region: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self { radial_nodes: 10, electrolyte_nodes_per_region: 10 }
    }
}

impl Discretization {
    pub fn validate(&self) -> Result<(), CellError> {
        if self.radial_nodes < 2 || self.electrolyte_nodes_per_region < 1 {
            return Err(CellError::InvalidParameter(format!(
                "discretization needs >= 2 radial nodes and >= 1 electrolyte node per region, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Concentration fields of the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    /// Anode particle concentration, centre to surface, mol/m³.
    pub anode: Vec<f64>,
    /// Cathode particle concentration, centre to surface, mol/m³.
    pub cathode: Vec<f64>,
    /// Electrolyte concentration from the anode to the cathode current collector, mol/m³.
    pub electrolyte: Vec<f64>,
    pub time: f64,
}

/// Scalar concentrations the output equation and features depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSummary {
    pub c_se_n: f64,
    pub c_se_p: f64,
    pub c_bar_n: f64,
    pub c_bar_p: f64,
    pub c_e_n: f64,
    pub c_e_p: f64,
}

impl CellState {
    /// Relaxed state at a given state of charge.
    pub fn equilibrium(params: &CellParameters, disc: Discretization, soc: f64) -> Self {
        let cn = params.anode.stoich_at_soc(soc) * params.anode.max_concentration;
        let cp = params.cathode.stoich_at_soc(soc) * params.cathode.max_concentration;
        Self {
            anode: vec![cn; disc.radial_nodes],
            cathode: vec![cp; disc.radial_nodes],
            electrolyte: vec![params.electrolyte.initial_concentration; 3 * disc.electrolyte_nodes_per_region],
            time: 0.0,
        }
    }

    pub fn summary(&self) -> StateSummary {
        StateSummary {
            c_se_n: *self.anode.last().expect("non-empty particle grid"),
            c_se_p: *self.cathode.last().expect("non-empty particle grid"),
            c_bar_n: sphere_mean(&self.anode),
            c_bar_p: sphere_mean(&self.cathode),
            c_e_n: self.electrolyte[0],
            c_e_p: *self.electrolyte.last().expect("non-empty electrolyte grid"),
        }
    }

    fn is_finite(&self) -> bool {
        self.anode
            .iter()
            .chain(&self.cathode)
            .chain(&self.electrolyte)
            .all(|c| c.is_finite())
    }
}

/// Control-volume weight of node `i` on an `n`-node vertex-centred sphere grid, in units of R³/3.
fn sphere_volume(i: usize, n: usize) -> f64 {
    let dr = 1.0 / (n - 1) as f64;
    let inner = if i == 0 { 0.0 } else { (i as f64 - 0.5) * dr };
    let outer = if i == n - 1 { 1.0 } else { (i as f64 + 0.5) * dr };
    outer.powi(3) - inner.powi(3)
}

fn sphere_volumes(n: usize) -> Vec<f64> {
    (0..n).map(|i| sphere_volume(i, n)).collect()
}

/// Volume-weighted mean over a vertex-centred sphere grid.
pub fn sphere_mean(c: &[f64]) -> f64 {
    // Weights sum to one.
    let n = c.len();
    c.iter().enumerate().map(|(i, c)| sphere_volume(i, n) * c).sum()
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored. The solution is written into `rhs`.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut denom = diag[0];
    scratch[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * scratch[i - 1];
        if i < n - 1 {
            scratch[i] = upper[i] / denom;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

struct SphereOperator {
    /// Control volumes (R³/3 units dropped into `scale`).
    volumes: Vec<f64>,
    /// Face conductances D·r²/Δr between node i and i+1, same units.
    conductances: Vec<f64>,
    /// Surface area factor R² in the same units.
    surface: f64,
}

impl SphereOperator {
    fn new(n: usize, radius: f64, diffusivity: f64) -> Self {
        let dr = radius / (n - 1) as f64;
        let volumes = sphere_volumes(n).into_iter().map(|v| v * radius.powi(3) / 3.0).collect();
        let conductances = (0..n - 1)
            .map(|i| {
                let rf = (i as f64 + 0.5) * dr;
                diffusivity * rf * rf / dr
            })
            .collect();
        Self { volumes, conductances, surface: radius * radius }
    }

    /// Implicit Euler step with outward molar flux density `flux` (mol/m²/s) at the surface.
    ///
    /// Solved for the increment, so a uniform profile with zero flux is an
    /// exact fixed point.
    fn step(&self, c: &mut [f64], flux: f64, dt: f64, work: &mut Workspace) {
        let n = c.len();
        work.resize(n);
        work.rhs.clear();
        work.rhs.resize(n, 0.0);
        for i in 0..n {
            let left = if i > 0 { self.conductances[i - 1] * dt } else { 0.0 };
            let right = if i < n - 1 { self.conductances[i] * dt } else { 0.0 };
            work.lower[i] = -left;
            work.upper[i] = -right;
            work.diag[i] = self.volumes[i] + left + right;
            if i > 0 {
                work.rhs[i] += left * (c[i - 1] - c[i]);
            }
            if i < n - 1 {
                work.rhs[i] += right * (c[i + 1] - c[i]);
            }
        }
        work.rhs[n - 1] -= dt * self.surface * flux;
        work.solve_into(c);
    }
}

struct ElectrolyteOperator {
    widths: Vec<f64>,
    conductances: Vec<f64>,
    porosity: f64,
    nodes_per_region: usize,
}

impl ElectrolyteOperator {
    fn new(params: &CellParameters, per_region: usize) -> Self {
        let m = per_region as f64;
        let mut widths = Vec::with_capacity(3 * per_region);
        for thickness in [params.anode.thickness, params.separator.thickness, params.cathode.thickness] {
            widths.extend(std::iter::repeat(thickness / m).take(per_region));
        }
        let d_eff = params.electrolyte.effective_diffusivity();
        let conductances = widths.windows(2).map(|w| d_eff / (0.5 * (w[0] + w[1]))).collect();
        Self { widths, conductances, porosity: params.electrolyte.volume_fraction, nodes_per_region: per_region }
    }

    /// `source_n` / `source_p` are volumetric Li⁺ generation rates, mol/m³/s.
    fn step(&self, c: &mut [f64], source_n: f64, source_p: f64, dt: f64, work: &mut Workspace) {
        let n = c.len();
        work.resize(n);
        work.rhs.resize(n, 0.0);
        let m = self.nodes_per_region;
        for i in 0..n {
            let left = if i > 0 { self.conductances[i - 1] * dt } else { 0.0 };
            let right = if i < n - 1 { self.conductances[i] * dt } else { 0.0 };
            let storage = self.porosity * self.widths[i];
            work.lower[i] = -left;
            work.upper[i] = -right;
            work.diag[i] = storage + left + right;
            let source = if i < m {
                source_n
            } else if i >= 2 * m {
                source_p
            } else {
                0.0
            };
            let mut r = dt * source * self.widths[i];
            if i > 0 {
                r += left * (c[i - 1] - c[i]);
            }
            if i < n - 1 {
                r += right * (c[i + 1] - c[i]);
            }
            work.rhs[i] = r;
        }
        work.solve_into(c);
    }

    /// Σ ε_e·c·Δx, mol/m².
    fn inventory(&self, c: &[f64]) -> f64 {
        self.widths.iter().zip(c).map(|(w, c)| self.porosity * w * c).sum()
    }
}

#[derive(Default)]
struct Workspace {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn resize(&mut self, n: usize) {
        self.lower.resize(n, 0.0);
        self.diag.resize(n, 0.0);
        self.upper.resize(n, 0.0);
    }

    /// Solves for the increment held in `rhs` and adds it to `c`.
    fn solve_into(&mut self, c: &mut [f64]) {
        solve_tridiagonal(&self.lower, &self.diag, &self.upper, &mut self.rhs, &mut self.scratch);
        for (c, d) in c.iter_mut().zip(&self.rhs) {
            *c += d;
        }
    }
}

/// Discretized SPMe for one parameter set.
pub struct SpmeModel<'a> {
    params: &'a CellParameters,
    ocv: &'a OcvSet,
    anode: SphereOperator,
    cathode: SphereOperator,
    electrolyte: ElectrolyteOperator,
    work: Workspace,
}

impl<'a> SpmeModel<'a> {
    pub fn new(params: &'a CellParameters, ocv: &'a OcvSet, disc: Discretization) -> Result<Self, CellError> {
        params.validate()?;
        disc.validate()?;
        Ok(Self {
            params,
            ocv,
            anode: SphereOperator::new(disc.radial_nodes, params.anode.particle_radius, params.anode.diffusivity),
            cathode: SphereOperator::new(
                disc.radial_nodes,
                params.cathode.particle_radius,
                params.cathode.diffusivity,
            ),
            electrolyte: ElectrolyteOperator::new(params, disc.electrolyte_nodes_per_region),
            work: Workspace::default(),
        })
    }

    pub fn params(&self) -> &CellParameters {
        self.params
    }

    /// Advances `state` by `dt` under constant `current` (positive = discharge).
    pub fn step(&mut self, state: &mut CellState, current: f64, dt: f64) -> Result<(), CellError> {
        if !(dt > 0.0) {
            return Err(CellError::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let p = self.params;
        let area = p.cell.area;
        // Outward pore-wall molar flux: lithium leaves the anode and enters the cathode on discharge.
        let flux_n = current / (FARADAY * area * p.anode.thickness * p.anode.specific_area());
        let flux_p = -current / (FARADAY * area * p.cathode.thickness * p.cathode.specific_area());
        self.anode.step(&mut state.anode, flux_n, dt, &mut self.work);
        self.cathode.step(&mut state.cathode, flux_p, dt, &mut self.work);

        let t_plus = p.electrolyte.transference_number;
        let source_n = (1.0 - t_plus) * current / (FARADAY * area * p.anode.thickness);
        let source_p = -(1.0 - t_plus) * current / (FARADAY * area * p.cathode.thickness);
        self.electrolyte.step(&mut state.electrolyte, source_n, source_p, dt, &mut self.work);

        state.time += dt;
        if !state.is_finite() {
            return Err(CellError::IntegrationFailure { step: (state.time / dt).round() as usize - 1 });
        }
        Ok(())
    }

    pub fn terminal_voltage(&self, state: &CellState, current: f64) -> Result<f64, CellError> {
        terminal_voltage_from_summary(&state.summary(), current, self.params, self.ocv)
    }

    /// Electrolyte lithium per unit plate area, mol/m².
    pub fn electrolyte_inventory(&self, state: &CellState) -> f64 {
        self.electrolyte.inventory(&state.electrolyte)
    }
}

/// Terminal voltage of the SPMe for the given concentrations and current.
///
/// `V = U_p − U_n + (φ_e,p − φ_e,n) + η_p − η_n − I·R_l` with inverse-sinh
/// Butler–Volmer overpotentials (symmetric transfer). The electrolyte potential
/// difference is the concentration term only; electrolyte Ohmic resistance is
/// part of R_l.
pub fn terminal_voltage_from_summary(
    s: &StateSummary,
    current: f64,
    params: &CellParameters,
    ocv: &OcvSet,
) -> Result<f64, CellError> {
    let p = params;
    let vt = p.thermal_voltage();
    let x = s.c_se_n / p.anode.max_concentration;
    let y = s.c_se_p / p.cathode.max_concentration;
    let u_n = ocv.anode.eval(x, Electrode::Anode)?;
    let u_p = ocv.cathode.eval(y, Electrode::Cathode)?;

    let eta_n = overpotential(
        current / (p.anode.specific_area() * p.cell.area * p.anode.thickness),
        p.anode.reaction_rate,
        s.c_e_n,
        s.c_se_n,
        p.anode.max_concentration,
        vt,
        Electrode::Anode,
    )?;
    let eta_p = overpotential(
        -current / (p.cathode.specific_area() * p.cell.area * p.cathode.thickness),
        p.cathode.reaction_rate,
        s.c_e_p,
        s.c_se_p,
        p.cathode.max_concentration,
        vt,
        Electrode::Cathode,
    )?;

    if !(s.c_e_n > 0.0 && s.c_e_p > 0.0) {
        return Err(CellError::Singularity {
            electrode: if s.c_e_n > 0.0 { Electrode::Cathode } else { Electrode::Anode },
            detail: format!("electrolyte concentration {} / {}", s.c_e_n, s.c_e_p),
        });
    }
    let phi_e = 2.0 * vt * (1.0 - p.electrolyte.transference_number) * (s.c_e_p / s.c_e_n).ln();

    Ok(u_p - u_n + phi_e + eta_p - eta_n - current * p.cell.lumped_resistance)
}

fn overpotential(
    current_density: f64,
    rate: f64,
    c_e: f64,
    c_se: f64,
    c_max: f64,
    vt: f64,
    electrode: Electrode,
) -> Result<f64, CellError> {
    let product = c_e * c_se * (c_max - c_se);
    if !(product > 0.0) {
        return Err(CellError::Singularity {
            electrode,
            detail: format!("exchange current vanishes (c_e = {c_e}, c_se = {c_se}, c_max = {c_max})"),
        });
    }
    let i0 = rate * product.sqrt();
    Ok(2.0 * vt * (current_density / (2.0 * i0)).asinh())
}

/// Free-function form of a single step for callers that do not hold a model.
pub fn step(
    state: &CellState,
    current: f64,
    dt: f64,
    params: &CellParameters,
) -> Result<CellState, CellError> {
    let disc = Discretization {
        radial_nodes: state.anode.len(),
        electrolyte_nodes_per_region: state.electrolyte.len() / 3,
    };
    let ocv = OcvSet::default();
    let mut model = SpmeModel::new(params, &ocv, disc)?;
    let mut next = state.clone();
    model.step(&mut next, current, dt)?;
    Ok(next)
}

/// Free-function form of the output equation using the shipped OCV curves.
pub fn terminal_voltage(state: &CellState, current: f64, params: &CellParameters) -> Result<f64, CellError> {
    terminal_voltage_from_summary(&state.summary(), current, params, &OcvSet::default())
}
