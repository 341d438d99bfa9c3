//! Reaction mechanisms: species registry, reaction steps, stoichiometry and
//! temperature-dependent mass-action kinetics.

mod kinetics;
mod parse;
mod stoich;

pub use kinetics::{mass_action_rate, rate_constants, reaction_rates, Kinetics};
pub use parse::parse_mechanism;
pub use stoich::StoichiometryMatrix;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpeciesKind {
    Gas { molar_mass: f64 },
    Adsorbate { site: String },
    /// Free site; `initial_conc` is the catalyst-zone site concentration in mol/m3.
    Site { initial_conc: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub kind: SpeciesKind,
    /// Optional elemental composition, e.g. {"C": 3, "H": 8}.
    pub composition: Option<BTreeMap<String, u32>>,
}

impl Species {
    pub fn gas(name: &str, molar_mass: f64) -> Self {
        Species { name: name.to_string(), kind: SpeciesKind::Gas { molar_mass }, composition: None }
    }

    pub fn adsorbate(name: &str, site: &str) -> Self {
        Species {
            name: name.to_string(),
            kind: SpeciesKind::Adsorbate { site: site.to_string() },
            composition: None,
        }
    }

    pub fn site(symbol: &str, initial_conc: f64) -> Self {
        Species {
            name: symbol.to_string(),
            kind: SpeciesKind::Site { initial_conc },
            composition: None,
        }
    }

    pub fn with_composition(mut self, formula: &str) -> Result<Self> {
        self.composition = Some(parse_formula(formula)?);
        Ok(self)
    }

    pub fn is_gas(&self) -> bool {
        matches!(self.kind, SpeciesKind::Gas { .. })
    }

    pub fn molar_mass(&self) -> Option<f64> {
        match self.kind {
            SpeciesKind::Gas { molar_mass } => Some(molar_mass),
            _ => None,
        }
    }

    /// Site type occupied by this species (adsorbate) or the site itself.
    pub fn site_type(&self) -> Option<&str> {
        match &self.kind {
            SpeciesKind::Adsorbate { site } => Some(site),
            SpeciesKind::Site { .. } => Some(&self.name),
            SpeciesKind::Gas { .. } => None,
        }
    }

    /// Count of a chemical element; zero when composition is undeclared.
    pub fn element_count(&self, element: &str) -> u32 {
        self.composition
            .as_ref()
            .and_then(|c| c.get(element).copied())
            .unwrap_or(0)
    }

    fn kind_rank(&self) -> u8 {
        match self.kind {
            SpeciesKind::Gas { .. } => 0,
            SpeciesKind::Adsorbate { .. } => 1,
            SpeciesKind::Site { .. } => 2,
        }
    }
}

/// One side of a reaction step: species index into [`Mechanism::species`] and
/// stoichiometric coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub species: usize,
    pub coeff: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionStep {
    pub reactants: Vec<Term>,
    pub products: Vec<Term>,
    /// Gibbs free energy of reaction, eV.
    pub delta_g: f64,
    /// Gibbs free energy of activation, eV.
    pub g_activation: f64,
    pub reversible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub name: String,
    /// Ordered gases first, then adsorbates, then free sites.
    pub species: Vec<Species>,
    pub steps: Vec<ReactionStep>,
    /// Non-fatal validation findings.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Mechanism {
    /// Builds and validates a mechanism. Species are reordered into
    /// gas/adsorbate/site blocks and step terms are remapped accordingly.
    pub fn new(name: &str, species: Vec<Species>, steps: Vec<ReactionStep>) -> Result<Self> {
        let mut order: Vec<usize> = (0..species.len()).collect();
        order.sort_by_key(|&i| (species[i].kind_rank(), i));
        let mut remap = vec![0; species.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let sorted: Vec<Species> = order.iter().map(|&i| species[i].clone()).collect();
        let steps = steps
            .into_iter()
            .map(|mut s| {
                for t in s.reactants.iter_mut().chain(s.products.iter_mut()) {
                    if t.species < remap.len() {
                        t.species = remap[t.species];
                    } else {
                        t.species = usize::MAX;
                    }
                }
                s
            })
            .collect();
        let mut mech = Mechanism { name: name.to_string(), species: sorted, steps, warnings: Vec::new() };
        mech.validate()?;
        Ok(mech)
    }

    /// Mechanism holding only non-reacting gases over a single site type.
    pub fn inert(gases: &[(&str, f64)]) -> Result<Self> {
        let mut species: Vec<Species> = gases.iter().map(|(n, m)| Species::gas(n, *m)).collect();
        species.push(Species::site("*", 1.0));
        Mechanism::new("inert", species, Vec::new())
    }

    fn validate(&mut self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.species {
            if !seen.insert(s.name.as_str()) {
                return Err(TapError::Mechanism(format!("duplicate species name '{}'", s.name)));
            }
        }
        if self.n_gas() == 0 {
            return Err(TapError::Mechanism("at least one gas species is required".into()));
        }
        if self.site_types().is_empty() {
            return Err(TapError::Mechanism("at least one site type is required".into()));
        }
        for s in &self.species {
            match &s.kind {
                SpeciesKind::Gas { molar_mass } => {
                    if !(*molar_mass > 0.0) {
                        return Err(TapError::Mechanism(format!(
                            "gas '{}' must have a positive molar mass",
                            s.name
                        )));
                    }
                }
                SpeciesKind::Adsorbate { site } => {
                    if self.site_index(site).is_none() {
                        return Err(TapError::Mechanism(format!(
                            "adsorbate '{}' references undeclared site type '{}'",
                            s.name, site
                        )));
                    }
                }
                SpeciesKind::Site { initial_conc } => {
                    if !(*initial_conc >= 0.0) {
                        return Err(TapError::Mechanism(format!(
                            "site '{}' must have a non-negative concentration",
                            s.name
                        )));
                    }
                }
            }
        }
        let mut warnings = Vec::new();
        for (j, step) in self.steps.iter().enumerate() {
            for t in step.reactants.iter().chain(&step.products) {
                if t.species >= self.species.len() {
                    return Err(TapError::Mechanism(format!("step {j}: unknown species")));
                }
                if t.coeff == 0 {
                    return Err(TapError::Mechanism(format!("step {j}: zero coefficient")));
                }
            }
            for site in self.site_types() {
                let count = |terms: &[Term]| -> u32 {
                    terms
                        .iter()
                        .filter(|t| self.species[t.species].site_type() == Some(site))
                        .map(|t| t.coeff)
                        .sum()
                };
                let (lhs, rhs) = (count(&step.reactants), count(&step.products));
                if lhs != rhs {
                    return Err(TapError::Mechanism(format!(
                        "step {j} ({}): site type '{site}' imbalance, {lhs} on reactant side vs {rhs} on product side",
                        self.format_step(step)
                    )));
                }
            }
            let terms: Vec<&Term> = step.reactants.iter().chain(&step.products).collect();
            if terms.iter().all(|t| {
                let s = &self.species[t.species];
                s.composition.is_some() || matches!(s.kind, SpeciesKind::Site { .. })
            }) && terms.iter().any(|t| self.species[t.species].composition.is_some())
            {
                let mut balance: BTreeMap<&str, i64> = BTreeMap::new();
                for (terms, sign) in [(&step.reactants, -1i64), (&step.products, 1)] {
                    for t in terms {
                        if let Some(c) = &self.species[t.species].composition {
                            for (el, n) in c {
                                *balance.entry(el.as_str()).or_default() += sign * (*n as i64) * t.coeff as i64;
                            }
                        }
                    }
                }
                if let Some((el, d)) = balance.iter().find(|(_, d)| **d != 0) {
                    return Err(TapError::Mechanism(format!(
                        "step {j} ({}): element {el} unbalanced by {d}",
                        self.format_step(step)
                    )));
                }
            }
            if step.g_activation < step.delta_g.max(0.0) {
                warnings.push(format!(
                    "step {j}: activation energy {} eV below max(0, dG = {} eV)",
                    step.g_activation, step.delta_g
                ));
            }
        }
        for w in &warnings {
            log::warn!("{}: {w}", self.name);
        }
        self.warnings = warnings;
        Ok(())
    }

    pub fn n_gas(&self) -> usize {
        self.species.iter().filter(|s| s.is_gas()).count()
    }

    pub fn n_surface(&self) -> usize {
        self.species.len() - self.n_gas()
    }

    pub fn gases(&self) -> &[Species] {
        &self.species[..self.n_gas()]
    }

    pub fn surface_species(&self) -> &[Species] {
        &self.species[self.n_gas()..]
    }

    pub fn gas_names(&self) -> Vec<String> {
        self.gases().iter().map(|s| s.name.clone()).collect()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn gas_index(&self, name: &str) -> Option<usize> {
        self.gases().iter().position(|s| s.name == name)
    }

    pub fn site_types(&self) -> Vec<&str> {
        self.species
            .iter()
            .filter(|s| matches!(s.kind, SpeciesKind::Site { .. }))
            .map(|s| s.name.as_str())
            .collect()
    }

    fn site_index(&self, symbol: &str) -> Option<usize> {
        self.species
            .iter()
            .position(|s| s.name == symbol && matches!(s.kind, SpeciesKind::Site { .. }))
    }

    pub fn stoichiometry(&self) -> StoichiometryMatrix {
        StoichiometryMatrix::from_mechanism(self)
    }

    /// Human-readable form of a step, `A + 2* <-> 2A*`.
    pub fn format_step(&self, step: &ReactionStep) -> String {
        let side = |terms: &[Term]| -> String {
            terms
                .iter()
                .map(|t| {
                    let name = self
                        .species
                        .get(t.species)
                        .map(|s| s.name.as_str())
                        .unwrap_or("?");
                    if t.coeff == 1 {
                        name.to_string()
                    } else {
                        format!("{}{}", t.coeff, name)
                    }
                })
                .collect::<Vec<_>>()
                .join(" + ")
        };
        let arrow = if step.reversible { "<->" } else { "->" };
        format!("{} {} {}", side(&step.reactants), arrow, side(&step.products))
    }

    /// Serializes back to the line-oriented mechanism file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name={}\n\n[gas]\n", self.name));
        let comp = |s: &Species| -> String {
            s.composition
                .as_ref()
                .map(|c| format!(" comp={}", format_formula(c)))
                .unwrap_or_default()
        };
        for s in self.gases() {
            out.push_str(&format!("{} mass={}{}\n", s.name, s.molar_mass().unwrap(), comp(s)));
        }
        out.push_str("\n[site]\n");
        for s in &self.species {
            if let SpeciesKind::Site { initial_conc } = s.kind {
                out.push_str(&format!("{} conc={}\n", s.name, initial_conc));
            }
        }
        out.push_str("\n[adsorbate]\n");
        for s in &self.species {
            if let SpeciesKind::Adsorbate { site } = &s.kind {
                out.push_str(&format!("{} site={}{}\n", s.name, site, comp(s)));
            }
        }
        out.push_str("\n[steps]\n");
        for step in &self.steps {
            out.push_str(&format!(
                "{} : dG={} Ga={}\n",
                self.format_step(step),
                step.delta_g,
                step.g_activation
            ));
        }
        out
    }

    /// Initial free-site concentration for each surface species (zero for adsorbates).
    pub fn initial_surface(&self) -> Vec<f64> {
        self.surface_species()
            .iter()
            .map(|s| match s.kind {
                SpeciesKind::Site { initial_conc } => initial_conc,
                _ => 0.0,
            })
            .collect()
    }
}

/// Parses a chemical formula such as `C3H8` or `CO2` into element counts.
pub fn parse_formula(formula: &str) -> Result<BTreeMap<String, u32>> {
    let mut out = BTreeMap::new();
    let chars: Vec<char> = formula.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_uppercase() {
            return Err(TapError::invalid(format!("bad formula '{formula}'")));
        }
        let mut el = chars[i].to_string();
        i += 1;
        while i < chars.len() && chars[i].is_ascii_lowercase() {
            el.push(chars[i]);
            i += 1;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let n: u32 = if start == i {
            1
        } else {
            chars[start..i].iter().collect::<String>().parse().unwrap()
        };
        *out.entry(el).or_insert(0) += n;
    }
    if out.is_empty() {
        return Err(TapError::invalid("empty formula"));
    }
    Ok(out)
}

fn format_formula(c: &BTreeMap<String, u32>) -> String {
    c.iter()
        .map(|(el, n)| if *n == 1 { el.clone() } else { format!("{el}{n}") })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step() -> Mechanism {
        Mechanism::new(
            "ads",
            vec![Species::gas("A", 40.0), Species::adsorbate("A*", "*"), Species::site("*", 1.0)],
            vec![ReactionStep {
                reactants: vec![Term { species: 0, coeff: 1 }, Term { species: 2, coeff: 1 }],
                products: vec![Term { species: 1, coeff: 1 }],
                delta_g: -0.2,
                g_activation: 0.3,
                reversible: true,
            }],
        )
        .unwrap()
    }

    #[test]
    fn species_are_ordered_by_kind() {
        let m = Mechanism::new(
            "x",
            vec![Species::site("*", 1.0), Species::adsorbate("A*", "*"), Species::gas("A", 40.0)],
            vec![ReactionStep {
                reactants: vec![Term { species: 2, coeff: 1 }, Term { species: 0, coeff: 1 }],
                products: vec![Term { species: 1, coeff: 1 }],
                delta_g: 0.0,
                g_activation: 0.5,
                reversible: true,
            }],
        )
        .unwrap();
        let names: Vec<_> = m.species.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["A", "A*", "*"]);
        assert_eq!(m.format_step(&m.steps[0]), "A + * <-> A*");
    }

    #[test]
    fn rejects_zero_molar_mass() {
        let err = Mechanism::new("x", vec![Species::gas("A", 0.0), Species::site("*", 1.0)], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_missing_site_type() {
        let err = Mechanism::new("x", vec![Species::gas("A", 4.0)], vec![]);
        assert!(err.unwrap_err().to_string().contains("site type"));
    }

    #[test]
    fn warns_on_low_barrier() {
        let mut m = one_step();
        m.steps[0].delta_g = 0.5;
        m.steps[0].g_activation = 0.1;
        m.validate().unwrap();
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn formula_parsing() {
        let c = parse_formula("C3H8").unwrap();
        assert_eq!(c["C"], 3);
        assert_eq!(c["H"], 8);
        assert_eq!(parse_formula("CO2").unwrap()["O"], 2);
        assert!(parse_formula("3C").is_err());
    }

    #[test]
    fn elemental_imbalance_is_rejected() {
        let r = Mechanism::new(
            "x",
            vec![
                Species::gas("O2", 32.0).with_composition("O2").unwrap(),
                Species::adsorbate("O*", "*").with_composition("O").unwrap(),
                Species::site("*", 1.0),
            ],
            vec![ReactionStep {
                reactants: vec![Term { species: 0, coeff: 1 }, Term { species: 2, coeff: 1 }],
                products: vec![Term { species: 1, coeff: 1 }],
                delta_g: 0.0,
                g_activation: 1.0,
                reversible: true,
            }],
        );
        assert!(r.unwrap_err().to_string().contains("element O"));
    }
}
