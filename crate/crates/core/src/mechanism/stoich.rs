use serde::Serialize;

use super::Mechanism;

/// Species-by-step matrix of signed stoichiometric coefficients
/// (products minus reactants). Rows follow [`Mechanism::species`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoichiometryMatrix {
    pub species: Vec<String>,
    pub n_steps: usize,
    entries: Vec<i64>,
    /// Site type of each row, `None` for gases.
    site_of_row: Vec<Option<String>>,
}

impl StoichiometryMatrix {
    pub fn from_mechanism(mech: &Mechanism) -> Self {
        let n_sp = mech.species.len();
        let n_steps = mech.steps.len();
        let mut entries = vec![0i64; n_sp * n_steps];
        for (j, step) in mech.steps.iter().enumerate() {
            for t in &step.reactants {
                entries[t.species * n_steps + j] -= t.coeff as i64;
            }
            for t in &step.products {
                entries[t.species * n_steps + j] += t.coeff as i64;
            }
        }
        StoichiometryMatrix {
            species: mech.species.iter().map(|s| s.name.clone()).collect(),
            n_steps,
            entries,
            site_of_row: mech.species.iter().map(|s| s.site_type().map(str::to_string)).collect(),
        }
    }

    pub fn get(&self, species: usize, step: usize) -> i64 {
        self.entries[species * self.n_steps + step]
    }

    pub fn column(&self, step: usize) -> Vec<i64> {
        (0..self.species.len()).map(|i| self.get(i, step)).collect()
    }

    /// Coefficient by species name.
    pub fn entry(&self, species: &str, step: usize) -> Option<i64> {
        self.species.iter().position(|s| s == species).map(|i| self.get(i, step))
    }

    /// Net change in occupied-plus-free sites of one type for a step.
    pub fn site_sum(&self, site: &str, step: usize) -> i64 {
        self.site_of_row
            .iter()
            .enumerate()
            .filter(|(_, s)| s.as_deref() == Some(site))
            .map(|(i, _)| self.get(i, step))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use crate::mechanism::{Mechanism, ReactionStep, Species, Term};

    #[test]
    fn single_adsorption_column() {
        let m = Mechanism::new(
            "ads",
            vec![Species::gas("A", 40.0), Species::adsorbate("A*", "*"), Species::site("*", 1.0)],
            vec![ReactionStep {
                reactants: vec![Term { species: 0, coeff: 1 }, Term { species: 2, coeff: 1 }],
                products: vec![Term { species: 1, coeff: 1 }],
                delta_g: 0.0,
                g_activation: 0.5,
                reversible: true,
            }],
        )
        .unwrap();
        let s = m.stoichiometry();
        assert_eq!(s.column(0), vec![-1, 1, -1]);
        assert_eq!(s.site_sum("*", 0), 0);
    }
}
