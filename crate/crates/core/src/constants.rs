//! Physical constants shared by every rate and transport calculation.

/// Boltzmann constant in eV/K.
pub const K_B_EV: f64 = 8.617333262e-5;

/// Boltzmann over Planck constant, K^-1 s^-1.
pub const K_B_OVER_H: f64 = 2.0836619e10;

/// Conversion from mol to nmol.
pub const NMOL_PER_MOL: f64 = 1e9;

/// Thermal energy kB*T in eV.
#[inline]
pub fn thermal_energy(temperature: f64) -> f64 {
    K_B_EV * temperature
}

/// Concentration unit in which mass-action rate laws are written, mol/m3
/// (1 nmol/cm3). Eyring constants carry units of this unit to the power
/// `1 - order`.
pub const RATE_CONCENTRATION_UNIT: f64 = 1e-3;
