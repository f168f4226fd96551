use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CellError;

/// Faraday constant, C/mol.
pub const FARADAY: f64 = 96_485.332_12;
/// Molar gas constant, J/(mol·K).
pub const GAS_CONSTANT: f64 = 8.314_462_618;

const DEFAULT_CELL: &str = include_str!("../../data/cell_default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeParameters {
    /// Active material volume fraction.
    pub active_fraction: f64,
    /// Solid-phase diffusion coefficient, m²/s.
    pub diffusivity: f64,
    pub particle_radius: f64,
    pub thickness: f64,
    /// Maximum solid concentration, mol/m³.
    pub max_concentration: f64,
    /// Reaction rate constant, A·m⁻²·(m³/mol)^1.5.
    pub reaction_rate: f64,
    /// Stoichiometry at 0 % state of charge.
    pub stoich_empty: f64,
    /// Stoichiometry at 100 % state of charge.
    pub stoich_full: f64,
}

impl ElectrodeParameters {
    /// Stoichiometry corresponding to a state of charge, linear in the window.
    pub fn stoich_at_soc(&self, soc: f64) -> f64 {
        self.stoich_empty + soc * (self.stoich_full - self.stoich_empty)
    }

    /// Inverse of [`stoich_at_soc`](Self::stoich_at_soc).
    pub fn soc_at_stoich(&self, stoich: f64) -> f64 {
        (stoich - self.stoich_empty) / (self.stoich_full - self.stoich_empty)
    }

    /// Specific interfacial area 3·ε_s/R, 1/m.
    pub fn specific_area(&self) -> f64 {
        3.0 * self.active_fraction / self.particle_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatorParameters {
    pub thickness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrolyteParameters {
    /// Electrolyte volume fraction, shared by all three regions.
    pub volume_fraction: f64,
    pub diffusivity: f64,
    pub initial_concentration: f64,
    pub transference_number: f64,
    pub bruggeman: f64,
}

impl ElectrolyteParameters {
    pub fn effective_diffusivity(&self) -> f64 {
        self.diffusivity * self.volume_fraction.powf(self.bruggeman)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConstants {
    /// Electrode plate area, m².
    pub area: f64,
    /// Nominal capacity used to convert C-rates to amperes, A·h.
    pub nominal_capacity_ah: f64,
    pub temperature: f64,
    /// Lumped Ohmic resistance R_l (electrolyte, current collectors, SEI), Ω.
    pub lumped_resistance: f64,
}

/// Full SPMe parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellParameters {
    pub anode: ElectrodeParameters,
    pub cathode: ElectrodeParameters,
    pub separator: SeparatorParameters,
    pub electrolyte: ElectrolyteParameters,
    pub cell: CellConstants,
}

impl Default for CellParameters {
    fn default() -> Self {
        toml::from_str(DEFAULT_CELL).expect("shipped cell parameters parse")
    }
}

impl CellParameters {
    pub fn from_toml_str(s: &str) -> Result<Self, CellError> {
        let params: Self = toml::from_str(s).map_err(|e| CellError::Config(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, CellError> {
        let text = std::fs::read_to_string(path).map_err(|e| CellError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CellError::Config(msg) => CellError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("cell parameters serialize")
    }

    /// Capacity implied by the anode window, A·h. This is the capacity the
    /// bulk state of charge integrates against.
    pub fn anode_capacity_ah(&self) -> f64 {
        let a = &self.anode;
        let moles = a.active_fraction
            * a.thickness
            * self.cell.area
            * a.max_concentration
            * (a.stoich_full - a.stoich_empty).abs();
        moles * FARADAY / 3600.0
    }

    /// Current for a C-rate based on the nominal capacity, A.
    pub fn c_rate_current(&self, rate: f64) -> f64 {
        rate * self.cell.nominal_capacity_ah
    }

    pub fn thermal_voltage(&self) -> f64 {
        GAS_CONSTANT * self.cell.temperature / FARADAY
    }

    pub fn total_thickness(&self) -> f64 {
        self.anode.thickness + self.separator.thickness + self.cathode.thickness
    }

    pub fn get(&self, p: Parameter) -> f64 {
        match p {
            Parameter::EpsSN => self.anode.active_fraction,
            Parameter::EpsSP => self.cathode.active_fraction,
            Parameter::DSN => self.anode.diffusivity,
            Parameter::DSP => self.cathode.diffusivity,
            Parameter::DE => self.electrolyte.diffusivity,
            Parameter::EpsE => self.electrolyte.volume_fraction,
        }
    }

    pub fn set(&mut self, p: Parameter, value: f64) {
        match p {
            Parameter::EpsSN => self.anode.active_fraction = value,
            Parameter::EpsSP => self.cathode.active_fraction = value,
            Parameter::DSN => self.anode.diffusivity = value,
            Parameter::DSP => self.cathode.diffusivity = value,
            Parameter::DE => self.electrolyte.diffusivity = value,
            Parameter::EpsE => self.electrolyte.volume_fraction = value,
        }
    }

    pub fn with(mut self, p: Parameter, value: f64) -> Self {
        self.set(p, value);
        self
    }

    pub fn validate(&self) -> Result<(), CellError> {
        fn fraction(name: &str, v: f64) -> Result<(), CellError> {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(CellError::InvalidParameter(format!("{name} = {v} must lie in (0, 1)")))
            }
        }
        fn positive(name: &str, v: f64) -> Result<(), CellError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CellError::InvalidParameter(format!("{name} = {v} must be positive")))
            }
        }
        for (label, e) in [("anode", &self.anode), ("cathode", &self.cathode)] {
            fraction(&format!("{label}.active_fraction"), e.active_fraction)?;
            positive(&format!("{label}.diffusivity"), e.diffusivity)?;
            positive(&format!("{label}.particle_radius"), e.particle_radius)?;
            positive(&format!("{label}.thickness"), e.thickness)?;
            positive(&format!("{label}.max_concentration"), e.max_concentration)?;
            positive(&format!("{label}.reaction_rate"), e.reaction_rate)?;
            let lo = e.stoich_empty.min(e.stoich_full);
            let hi = e.stoich_empty.max(e.stoich_full);
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
                return Err(CellError::InvalidParameter(format!(
                    "{label} stoichiometry window [{}, {}] must satisfy 0 <= min < max <= 1",
                    e.stoich_empty, e.stoich_full
                )));
            }
        }
        positive("separator.thickness", self.separator.thickness)?;
        let el = &self.electrolyte;
        fraction("electrolyte.volume_fraction", el.volume_fraction)?;
        positive("electrolyte.diffusivity", el.diffusivity)?;
        positive("electrolyte.initial_concentration", el.initial_concentration)?;
        fraction("electrolyte.transference_number", el.transference_number)?;
        positive("electrolyte.bruggeman", el.bruggeman)?;
        positive("cell.area", self.cell.area)?;
        positive("cell.nominal_capacity_ah", self.cell.nominal_capacity_ah)?;
        positive("cell.temperature", self.cell.temperature)?;
        if !(self.cell.lumped_resistance >= 0.0 && self.cell.lumped_resistance.is_finite()) {
            return Err(CellError::InvalidParameter(format!(
                "cell.lumped_resistance = {} must be nonnegative",
                self.cell.lumped_resistance
            )));
        }
        Ok(())
    }
}

/// The six health-related parameters that can be estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parameter {
    #[serde(rename = "eps_s_n")]
    EpsSN,
    #[serde(rename = "eps_s_p")]
    EpsSP,
    #[serde(rename = "d_s_n")]
    DSN,
    #[serde(rename = "d_s_p")]
    DSP,
    #[serde(rename = "d_e")]
    DE,
    #[serde(rename = "eps_e")]
    EpsE,
}

impl Parameter {
    pub const ALL: [Parameter; 6] = [
        Parameter::EpsSN,
        Parameter::EpsSP,
        Parameter::DSN,
        Parameter::DSP,
        Parameter::DE,
        Parameter::EpsE,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Parameter::EpsSN => "eps_s_n",
            Parameter::EpsSP => "eps_s_p",
            Parameter::DSN => "d_s_n",
            Parameter::DSP => "d_s_p",
            Parameter::DE => "d_e",
            Parameter::EpsE => "eps_e",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.key() == key)
    }

    pub fn is_volume_fraction(self) -> bool {
        matches!(self, Parameter::EpsSN | Parameter::EpsSP | Parameter::EpsE)
    }

    /// Diffusion coefficients span decades and are searched in log10 space.
    pub fn is_log_scaled(self) -> bool {
        matches!(self, Parameter::DSN | Parameter::DSP | Parameter::DE)
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}
