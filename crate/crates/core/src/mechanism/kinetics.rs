use super::{Mechanism, ReactionStep, Term};
use crate::constants::{thermal_energy, K_B_OVER_H, RATE_CONCENTRATION_UNIT};
use crate::error::{Result, TapError};
use crate::params::EnergyKind;

/// Eyring forward and thermodynamically consistent reverse rate constants.
///
/// `k_f = (kB T / h) exp(-Ga / kB T)`, `k_r = k_f / exp(-dG / kB T)`;
/// `k_r = 0` for irreversible steps.
pub fn rate_constants(step: &ReactionStep, temperature: f64) -> Result<(f64, f64)> {
    energies_to_constants(step.delta_g, step.g_activation, step.reversible, temperature)
}

pub(crate) fn energies_to_constants(
    delta_g: f64,
    g_activation: f64,
    reversible: bool,
    temperature: f64,
) -> Result<(f64, f64)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(TapError::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let kt = thermal_energy(temperature);
    let kf = K_B_OVER_H * temperature * (-g_activation / kt).exp();
    // k_f / K_eq written as one exponent so huge equilibrium constants do not overflow.
    let kr = if reversible {
        K_B_OVER_H * temperature * ((delta_g - g_activation) / kt).exp()
    } else {
        0.0
    };
    Ok((kf, kr))
}

/// Mass-action rate of one step with explicit rate constants; reaction
/// orders equal the stoichiometric coefficients.
pub fn mass_action_rate(step: &ReactionStep, kf: f64, kr: f64, conc: &[f64]) -> f64 {
    let prod = |terms: &[Term]| -> f64 {
        terms.iter().map(|t| conc[t.species].powi(t.coeff as i32)).product()
    };
    let fwd = kf * prod(&step.reactants);
    if kr == 0.0 {
        fwd
    } else {
        fwd - kr * prod(&step.products)
    }
}

/// Rates of every step (mol/m3/s) for the given gas and surface concentrations.
pub fn reaction_rates(
    mech: &Mechanism,
    temperature: f64,
    gas_conc: &[f64],
    surf_conc: &[f64],
) -> Result<Vec<f64>> {
    if gas_conc.len() != mech.n_gas() || surf_conc.len() != mech.n_surface() {
        return Err(TapError::invalid("concentration vector length does not match mechanism"));
    }
    if gas_conc.iter().chain(surf_conc).any(|&c| !(c >= 0.0)) {
        return Err(TapError::invalid("concentrations must be non-negative"));
    }
    let conc: Vec<f64> = gas_conc.iter().chain(surf_conc).copied().collect();
    let kin = Kinetics::new(mech, temperature)?;
    let mut r = vec![0.0; mech.steps.len()];
    kin.rates(&conc, &mut r);
    Ok(r)
}

#[derive(Debug, Clone)]
struct CompiledStep {
    reactants: Vec<(usize, i32)>,
    products: Vec<(usize, i32)>,
    /// Net stoichiometric change per species.
    net: Vec<(usize, f64)>,
}

/// Mechanism compiled at a fixed temperature for repeated rate evaluation.
///
/// Rate laws take concentrations in mol/m3 and return mol/m3/s; the Eyring
/// constants `kf`/`kr` are expressed per [`RATE_CONCENTRATION_UNIT`], and
/// `kf_si`/`kr_si` are the same constants converted to mol/m3.
#[derive(Debug, Clone)]
pub struct Kinetics {
    pub kf: Vec<f64>,
    pub kr: Vec<f64>,
    pub kf_si: Vec<f64>,
    pub kr_si: Vec<f64>,
    /// kB T, eV
    pub thermal_energy: f64,
    steps: Vec<CompiledStep>,
    n_species: usize,
}

impl Kinetics {
    pub fn new(mech: &Mechanism, temperature: f64) -> Result<Self> {
        let energies: Vec<(f64, f64)> = mech.steps.iter().map(|s| (s.delta_g, s.g_activation)).collect();
        Self::with_energies(mech, temperature, &energies)
    }

    /// Compiles with per-step `(dG, Ga)` overriding the mechanism values.
    pub fn with_energies(mech: &Mechanism, temperature: f64, energies: &[(f64, f64)]) -> Result<Self> {
        if energies.len() != mech.steps.len() {
            return Err(TapError::invalid("energy list length does not match step count"));
        }
        let mut kf = Vec::with_capacity(energies.len());
        let mut kr = Vec::with_capacity(energies.len());
        for (step, &(dg, ga)) in mech.steps.iter().zip(energies) {
            let (f, r) = energies_to_constants(dg, ga, step.reversible, temperature)?;
            kf.push(f);
            kr.push(r);
        }
        let stoich = mech.stoichiometry();
        let steps: Vec<CompiledStep> = mech
            .steps
            .iter()
            .enumerate()
            .map(|(j, s)| CompiledStep {
                reactants: s.reactants.iter().map(|t| (t.species, t.coeff as i32)).collect(),
                products: s.products.iter().map(|t| (t.species, t.coeff as i32)).collect(),
                net: (0..mech.species.len())
                    .filter_map(|i| {
                        let v = stoich.get(i, j);
                        (v != 0).then_some((i, v as f64))
                    })
                    .collect(),
            })
            .collect();
        let unit = RATE_CONCENTRATION_UNIT;
        let order = |terms: &[(usize, i32)]| terms.iter().map(|t| t.1).sum::<i32>();
        let kf_si = steps
            .iter()
            .zip(&kf)
            .map(|(s, k): (&CompiledStep, &f64)| k * unit.powi(1 - order(&s.reactants)))
            .collect();
        let kr_si = steps
            .iter()
            .zip(&kr)
            .map(|(s, k): (&CompiledStep, &f64)| k * unit.powi(1 - order(&s.products)))
            .collect();
        Ok(Kinetics {
            kf,
            kr,
            kf_si,
            kr_si,
            thermal_energy: thermal_energy(temperature),
            steps,
            n_species: mech.species.len(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn rates(&self, conc: &[f64], out: &mut [f64]) {
        for (j, s) in self.steps.iter().enumerate() {
            let fwd: f64 = s.reactants.iter().map(|&(i, n)| conc[i].powi(n)).product();
            let mut r = self.kf_si[j] * fwd;
            if self.kr_si[j] != 0.0 {
                let rev: f64 = s.products.iter().map(|&(i, n)| conc[i].powi(n)).product();
                r -= self.kr_si[j] * rev;
            }
            out[j] = r;
        }
    }

    /// Net production rate per species, `M r`.
    pub fn production(&self, conc: &[f64], out: &mut [f64]) {
        out[..self.n_species].iter_mut().for_each(|v| *v = 0.0);
        for (j, s) in self.steps.iter().enumerate() {
            let fwd: f64 = s.reactants.iter().map(|&(i, n)| conc[i].powi(n)).product();
            let mut r = self.kf_si[j] * fwd;
            if self.kr_si[j] != 0.0 {
                let rev: f64 = s.products.iter().map(|&(i, n)| conc[i].powi(n)).product();
                r -= self.kr_si[j] * rev;
            }
            for &(i, v) in &s.net {
                out[i] += v * r;
            }
        }
    }

    /// Forward and reverse rates of step `j`, mol/m3/s.
    fn directional_rates(&self, j: usize, conc: &[f64]) -> (f64, f64) {
        let s = &self.steps[j];
        let fwd = self.kf_si[j] * s.reactants.iter().map(|&(i, n)| conc[i].powi(n)).product::<f64>();
        let rev = if self.kr_si[j] != 0.0 {
            self.kr_si[j] * s.products.iter().map(|&(i, n)| conc[i].powi(n)).product::<f64>()
        } else {
            0.0
        };
        (fwd, rev)
    }

    /// Adds `d(M r)/dp` for the energy `kind` of step `j` into `out`.
    ///
    /// Raising `Ga` scales both directions by `exp(-dGa/kBT)`; raising `dG`
    /// scales only the reverse rate by `exp(+d dG/kBT)`.
    pub fn add_energy_derivative(&self, j: usize, kind: EnergyKind, conc: &[f64], out: &mut [f64]) {
        let (fwd, rev) = self.directional_rates(j, conc);
        let dr = match kind {
            EnergyKind::Activation => -(fwd - rev) / self.thermal_energy,
            EnergyKind::DeltaG => -rev / self.thermal_energy,
        };
        for &(i, v) in &self.steps[j].net {
            out[i] += v * dr;
        }
    }

    /// Production rates and their Jacobian `d(M r)_a / d c_b`, row-major n x n.
    pub fn production_with_jacobian(&self, conc: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let n = self.n_species;
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        jac[..n * n].iter_mut().for_each(|v| *v = 0.0);
        let mut stack = [0.0; 32];
        let mut heap = Vec::new();
        let drdc: &mut [f64] = if n <= stack.len() {
            &mut stack[..n]
        } else {
            heap.resize(n, 0.0);
            &mut heap
        };
        for (j, s) in self.steps.iter().enumerate() {
            for &(b, _) in s.reactants.iter().chain(&s.products) {
                drdc[b] = 0.0;
            }
            let r_f = Self::side(&s.reactants, conc, self.kf_si[j], drdc, 1.0);
            let r_r = if self.kr_si[j] != 0.0 {
                Self::side(&s.products, conc, self.kr_si[j], drdc, -1.0)
            } else {
                0.0
            };
            let r = r_f - r_r;
            for &(a, v) in &s.net {
                out[a] += v * r;
                for &(b, _) in s.reactants.iter().chain(&s.products) {
                    jac[a * n + b] += v * drdc[b];
                }
            }
            // terms appearing on both sides were visited twice above
            for &(b, _) in &s.reactants {
                if s.products.iter().any(|&(p, _)| p == b) {
                    for &(a, v) in &s.net {
                        jac[a * n + b] -= v * drdc[b];
                    }
                }
            }
        }
    }

    /// Value `k * prod c_i^n_i`; accumulates `sign * d/dc` into `grad`.
    fn side(terms: &[(usize, i32)], conc: &[f64], k: f64, grad: &mut [f64], sign: f64) -> f64 {
        let value = k * terms.iter().map(|&(i, n)| conc[i].powi(n)).product::<f64>();
        for (idx, &(i, n)) in terms.iter().enumerate() {
            let mut d = k * n as f64 * conc[i].powi(n - 1);
            for (other, &(m, p)) in terms.iter().enumerate() {
                if other != idx {
                    d *= conc[m].powi(p);
                }
            }
            grad[i] += sign * d;
        }
        value
    }
}
