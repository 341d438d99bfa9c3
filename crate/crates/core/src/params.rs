//! Kinetic parameter vectors: per-step free energies, which of them are
//! free for fitting, and their bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::mechanism::Mechanism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyKind {
    /// Gibbs free energy of reaction.
    DeltaG,
    /// Gibbs free energy of activation.
    Activation,
}

impl EnergyKind {
    pub fn prefix(self) -> &'static str {
        match self {
            EnergyKind::DeltaG => "dG",
            EnergyKind::Activation => "Ga",
        }
    }

    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            EnergyKind::DeltaG => (-2.0, 1.0),
            EnergyKind::Activation => (0.0, 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    /// eV
    pub value: f64,
    pub free: bool,
    pub lower: f64,
    pub upper: f64,
    pub step: usize,
    pub kind: EnergyKind,
}

/// Ordered parameter vector mapping names such as `dG1` or `Ga3` to the
/// free energies of step 1 / step 3 (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub entries: Vec<Parameter>,
}

pub fn parameter_name(kind: EnergyKind, step: usize) -> String {
    format!("{}{}", kind.prefix(), step)
}

impl ParameterSet {
    /// All `2 * n_steps` energies of the mechanism, fixed at their file values.
    pub fn from_mechanism(mech: &Mechanism) -> Self {
        let mut entries = Vec::with_capacity(2 * mech.steps.len());
        for (j, s) in mech.steps.iter().enumerate() {
            for (kind, value) in [(EnergyKind::DeltaG, s.delta_g), (EnergyKind::Activation, s.g_activation)] {
                let (lower, upper) = kind.default_bounds();
                entries.push(Parameter {
                    name: parameter_name(kind, j),
                    value,
                    free: false,
                    lower,
                    upper,
                    step: j,
                    kind,
                });
            }
        }
        ParameterSet { entries }
    }

    /// Marks the named parameters free (all others fixed), in the given order
    /// for the free-parameter vector.
    pub fn with_free(mut self, names: &[&str]) -> Result<Self> {
        for e in &mut self.entries {
            e.free = false;
        }
        let mut ordered = Vec::with_capacity(self.entries.len());
        for name in names {
            let idx = self
                .index(name)
                .ok_or_else(|| TapError::invalid(format!("unknown parameter '{name}'")))?;
            if self.entries[idx].free {
                return Err(TapError::invalid(format!("parameter '{name}' listed twice")));
            }
            self.entries[idx].free = true;
            ordered.push(self.entries[idx].clone());
        }
        ordered.extend(self.entries.iter().filter(|e| !e.free).cloned());
        self.entries = ordered;
        Ok(self)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.entries[i].value)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| TapError::invalid(format!("unknown parameter '{name}'")))?;
        self.entries[i].value = value;
        Ok(())
    }

    pub fn free_count(&self) -> usize {
        self.entries.iter().filter(|e| e.free).count()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.entries.iter().filter(|e| e.free).map(|e| e.name.clone()).collect()
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.entries.iter().filter(|e| e.free).map(|e| e.value).collect()
    }

    pub fn free_bounds(&self) -> Vec<(f64, f64)> {
        self.entries.iter().filter(|e| e.free).map(|e| (e.lower, e.upper)).collect()
    }

    /// Copy with the free entries replaced, in free order.
    pub fn with_free_values(&self, values: &[f64]) -> Self {
        let mut out = self.clone();
        for (e, v) in out.entries.iter_mut().filter(|e| e.free).zip(values) {
            e.value = *v;
        }
        out
    }

    /// Sets every free `dG` and `Ga` to a common starting guess.
    pub fn with_initial_guess(mut self, delta_g: f64, activation: f64) -> Self {
        for e in self.entries.iter_mut().filter(|e| e.free) {
            e.value = match e.kind {
                EnergyKind::DeltaG => delta_g,
                EnergyKind::Activation => activation,
            };
        }
        self
    }

    /// Per-step `(dG, Ga)` with this set's values applied over the mechanism.
    pub fn energies(&self, mech: &Mechanism) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = mech.steps.iter().map(|s| (s.delta_g, s.g_activation)).collect();
        for e in &self.entries {
            if let Some(slot) = out.get_mut(e.step) {
                match e.kind {
                    EnergyKind::DeltaG => slot.0 = e.value,
                    EnergyKind::Activation => slot.1 = e.value,
                }
            }
        }
        out
    }

    pub fn validate(&self, mech: &Mechanism) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(TapError::invalid(format!("duplicate parameter '{}'", e.name)));
            }
            if e.step >= mech.steps.len() {
                return Err(TapError::invalid(format!(
                    "parameter '{}' maps to step {} but the mechanism has {} steps",
                    e.name,
                    e.step,
                    mech.steps.len()
                )));
            }
            if !e.value.is_finite() {
                return Err(TapError::invalid(format!("parameter '{}' is not finite", e.name)));
            }
        }
        Ok(())
    }

    /// Free values must lie within their bounds.
    pub fn check_bounds(&self) -> Result<()> {
        for e in self.entries.iter().filter(|e| e.free) {
            if !(e.value >= e.lower && e.value <= e.upper) {
                return Err(TapError::invalid(format!(
                    "parameter '{}' = {} outside bounds [{}, {}]",
                    e.name, e.value, e.lower, e.upper
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn free_subset_ordering() {
        let mech = fixtures::mechanism(1);
        let p = ParameterSet::from_mechanism(&mech)
            .with_free(&["Ga3", "dG0"])
            .unwrap();
        assert_eq!(p.free_names(), ["Ga3", "dG0"]);
        assert_eq!(p.free_values(), [1.54, -0.2]);
        let q = p.with_free_values(&[1.6, -0.25]);
        let e = q.energies(&mech);
        assert_eq!(e[3].1, 1.6);
        assert_eq!(e[0].0, -0.25);
        assert_eq!(e[6], (-8.0, 0.1));
    }

    #[test]
    fn unknown_and_out_of_range() {
        let mech = fixtures::mechanism(1);
        let p = ParameterSet::from_mechanism(&mech);
        assert!(p.clone().with_free(&["dG9"]).is_err());
        let mut q = p.with_free(&["dG1"]).unwrap();
        q.set("dG1", -5.0).unwrap();
        assert!(q.validate(&mech).is_ok());
        assert!(q.check_bounds().is_err());
        q.set("dG1", f64::NAN).unwrap();
        assert!(q.validate(&mech).is_err());
    }
}
