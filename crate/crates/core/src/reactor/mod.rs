//! TAP reactor model: three-zone packed bed under Knudsen diffusion with
//! surface reactions confined to the catalyst zone.

mod flux;
mod inert;
mod solver;

pub use flux::FluxSeries;
pub use inert::inert_reference_curve;
pub use solver::{outlet_flux, simulate, simulate_with, simulate_with_tangents, SimulationResult, SolverOptions, StateField};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::mechanism::Mechanism;
use crate::params::ParameterSet;

/// Reactor dimensions and transport reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReactorGeometry {
    /// Inert, catalyst and inert zone lengths, m.
    pub zone_lengths: [f64; 3],
    /// Void fraction of each zone.
    pub zone_void_fractions: [f64; 3],
    /// m2
    pub cross_section_area: f64,
    /// Knudsen diffusivity at the reference mass and temperature, m2/s.
    pub reference_diffusivity: f64,
    /// amu
    pub reference_mass: f64,
    /// K
    pub reference_temperature: f64,
}

impl Default for ReactorGeometry {
    fn default() -> Self {
        ReactorGeometry {
            zone_lengths: [0.019, 0.002, 0.019],
            zone_void_fractions: [0.4; 3],
            cross_section_area: 1.14e-4,
            reference_diffusivity: 0.002,
            reference_mass: 40.0,
            reference_temperature: 700.0,
        }
    }
}

impl ReactorGeometry {
    pub fn length(&self) -> f64 {
        self.zone_lengths.iter().sum()
    }

    /// Catalyst zone as `[start, end]` in m.
    pub fn catalyst_span(&self) -> (f64, f64) {
        let start = self.zone_lengths[0];
        (start, start + self.zone_lengths[1])
    }

    pub fn is_uniform(&self) -> bool {
        let e = self.zone_void_fractions;
        e[0] == e[1] && e[1] == e[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.zone_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(TapError::invalid("zone lengths must be positive"));
        }
        if self.zone_void_fractions.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(TapError::invalid("void fractions must lie in (0, 1)"));
        }
        if !(self.cross_section_area > 0.0) {
            return Err(TapError::invalid("cross-section area must be positive"));
        }
        if !(self.reference_diffusivity > 0.0 && self.reference_mass > 0.0 && self.reference_temperature > 0.0) {
            return Err(TapError::invalid("reference diffusivity, mass and temperature must be positive"));
        }
        Ok(())
    }
}

/// Reactor geometry plus numerics: everything a simulation needs besides
/// the mechanism, the design and the parameter values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Simulator {
    #[serde(default)]
    pub geometry: ReactorGeometry,
    #[serde(default)]
    pub options: SolverOptions,
}

impl Simulator {
    pub fn new(geometry: ReactorGeometry, options: SolverOptions) -> Self {
        Simulator { geometry, options }
    }

    pub fn run(&self, mech: &Mechanism, design: &ExperimentDesign, params: &ParameterSet) -> Result<SimulationResult> {
        simulate_with(mech, &self.geometry, design, params, &self.options)
    }

    pub fn flux(&self, mech: &Mechanism, design: &ExperimentDesign, params: &ParameterSet) -> Result<FluxSeries> {
        Ok(self.run(mech, design, params)?.flux)
    }

    /// Flux and its derivatives with respect to the free parameters.
    pub fn flux_with_tangents(
        &self,
        mech: &Mechanism,
        design: &ExperimentDesign,
        params: &ParameterSet,
    ) -> Result<(FluxSeries, Vec<FluxSeries>)> {
        let (r, t) = simulate_with_tangents(mech, &self.geometry, design, params, &self.options)?;
        Ok((r.flux, t))
    }
}

/// Knudsen diffusivity scaled from the reference gas: `D_ref * sqrt(m_ref/m * T/T_ref)`.
pub fn knudsen_diffusivity(molar_mass: f64, temperature: f64, geometry: &ReactorGeometry) -> Result<f64> {
    if !(molar_mass > 0.0) || !(temperature > 0.0) {
        return Err(TapError::invalid("molar mass and temperature must be positive"));
    }
    Ok(geometry.reference_diffusivity
        * ((geometry.reference_mass / molar_mass) * (temperature / geometry.reference_temperature)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub gas: String,
    /// nmol
    pub intensity: f64,
    /// s
    pub delay: f64,
}

/// The designable knobs of one pulse experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub pulses: Vec<Pulse>,
    /// K
    pub temperature: f64,
    /// Simulated time span, s.
    pub horizon: f64,
}

pub const DEFAULT_HORIZON: f64 = 2.5;

impl ExperimentDesign {
    /// Propane/oxygen pump-probe: oxygen at t = 0, propane after `propane_delay`.
    pub fn pump_probe(c3h8_nmol: f64, o2_nmol: f64, propane_delay: f64, temperature: f64) -> Self {
        ExperimentDesign {
            pulses: vec![
                Pulse { gas: "C3H8".into(), intensity: c3h8_nmol, delay: propane_delay },
                Pulse { gas: "O2".into(), intensity: o2_nmol, delay: 0.0 },
            ],
            temperature,
            horizon: DEFAULT_HORIZON,
        }
    }

    /// Single pulse of one gas at t = 0.
    pub fn single(gas: &str, intensity: f64, temperature: f64) -> Self {
        ExperimentDesign {
            pulses: vec![Pulse { gas: gas.into(), intensity, delay: 0.0 }],
            temperature,
            horizon: DEFAULT_HORIZON,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn intensity(&self, gas: &str) -> f64 {
        self.pulses.iter().filter(|p| p.gas == gas).map(|p| p.intensity).sum()
    }

    pub fn delay(&self, gas: &str) -> f64 {
        self.pulses.iter().find(|p| p.gas == gas).map(|p| p.delay).unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(TapError::invalid("temperature must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(TapError::invalid("horizon must be positive"));
        }
        for p in &self.pulses {
            if !(p.intensity >= 0.0) {
                return Err(TapError::invalid(format!("pulse intensity for {} must be >= 0", p.gas)));
            }
            if !(p.delay >= 0.0 && p.delay < self.horizon) {
                return Err(TapError::invalid(format!(
                    "pulse delay for {} must lie in [0, horizon)",
                    p.gas
                )));
            }
        }
        Ok(())
    }

    /// Short description used in reports and error messages.
    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self
            .pulses
            .iter()
            .map(|p| format!("{}={}nmol@{}s", p.gas, p.intensity, p.delay))
            .collect();
        parts.push(format!("T={}K", self.temperature));
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knudsen_identity_and_mass_scaling() {
        let g = ReactorGeometry::default();
        assert_eq!(knudsen_diffusivity(40.0, 700.0, &g).unwrap(), 0.002);
        assert!((knudsen_diffusivity(160.0, 700.0, &g).unwrap() - 0.001).abs() < 1e-15);
        let d = knudsen_diffusivity(32.0, 700.0, &g).unwrap();
        assert!((d / 0.002 - 1.118).abs() < 1e-3);
        assert!((d / 0.002 - (1.25f64).sqrt()).abs() < 1e-14);
        assert!(knudsen_diffusivity(0.0, 700.0, &g).is_err());
        assert!(knudsen_diffusivity(40.0, -1.0, &g).is_err());
    }

    #[test]
    fn design_validation() {
        let mut d = ExperimentDesign::pump_probe(1.0, 1.0, 0.6, 650.0);
        assert!(d.validate().is_ok());
        assert_eq!(d.delay("C3H8"), 0.6);
        assert_eq!(d.intensity("O2"), 1.0);
        d.pulses[0].delay = 2.5;
        assert!(d.validate().is_err());
        d.pulses[0].delay = 0.0;
        d.pulses[1].intensity = -1.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn geometry_defaults_are_valid() {
        let g = ReactorGeometry::default();
        g.validate().unwrap();
        assert!((g.length() - 0.04).abs() < 1e-15);
        let mut bad = g.clone();
        bad.zone_void_fractions[1] = 1.0;
        assert!(bad.validate().is_err());
    }
}
