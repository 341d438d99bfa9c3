use std::collections::HashMap;

use super::{Mechanism, ReactionStep, Species, Term};
use crate::error::{Result, TapError};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Gas,
    Site,
    Adsorbate,
    Steps,
}

fn syntax(line: usize, msg: impl Into<String>) -> TapError {
    TapError::Syntax { line, msg: msg.into() }
}

/// Splits `key=value` tokens after the leading name.
fn key_values(line_no: usize, tokens: &[&str]) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| syntax(line_no, format!("expected key=value, found '{tok}'")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn number(line_no: usize, kv: &HashMap<String, String>, key: &str) -> Result<f64> {
    let raw = kv
        .get(key)
        .ok_or_else(|| syntax(line_no, format!("missing '{key}='")))?;
    raw.parse::<f64>()
        .map_err(|_| syntax(line_no, format!("'{key}={raw}' is not a number")))
}

fn parse_side(line_no: usize, side: &str, index: &HashMap<String, usize>) -> Result<Vec<Term>> {
    let mut terms: Vec<Term> = Vec::new();
    for raw in side.split('+') {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(syntax(line_no, "empty term in reaction"));
        }
        let digits = raw.chars().take_while(|c| c.is_ascii_digit()).count();
        let (coeff, name) = if digits == 0 {
            (1, raw)
        } else {
            let c: u32 = raw[..digits]
                .parse()
                .map_err(|_| syntax(line_no, format!("bad coefficient in '{raw}'")))?;
            (c, raw[digits..].trim())
        };
        if coeff == 0 {
            return Err(syntax(line_no, format!("zero coefficient in '{raw}'")));
        }
        let species = *index
            .get(name)
            .ok_or_else(|| TapError::Mechanism(format!("line {line_no}: unknown species '{name}'")))?;
        match terms.iter_mut().find(|t| t.species == species) {
            Some(t) => t.coeff += coeff,
            None => terms.push(Term { species, coeff }),
        }
    }
    Ok(terms)
}

/// Parses the line-oriented mechanism file format.
///
/// ```text
/// [gas]
/// C3H8 mass=44.1
/// [site]
/// * conc=0.5
/// [adsorbate]
/// C3H8* site=*
/// [steps]
/// C3H8 + * <-> C3H8* : dG=-0.2 Ga=0.3
/// ```
pub fn parse_mechanism(text: &str) -> Result<Mechanism> {
    let mut section = Section::None;
    let mut name = String::from("mechanism");
    let mut species: Vec<Species> = Vec::new();
    let mut step_lines: Vec<(usize, String)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[gas]" => Section::Gas,
                "[site]" => Section::Site,
                "[adsorbate]" => Section::Adsorbate,
                "[steps]" => Section::Steps,
                other => return Err(syntax(line_no, format!("unknown section '{other}'"))),
            };
            continue;
        }
        if section == Section::Steps {
            step_lines.push((line_no, line.to_string()));
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if section == Section::None {
            match line.split_once('=') {
                Some(("name", v)) => {
                    name = v.trim().to_string();
                    continue;
                }
                _ => return Err(syntax(line_no, "content outside of a section")),
            }
        }
        let sp_name = tokens[0];
        if sp_name.contains('=') || sp_name.starts_with(|c: char| c.is_ascii_digit()) {
            return Err(syntax(line_no, format!("invalid species name '{sp_name}'")));
        }
        let kv = key_values(line_no, &tokens[1..])?;
        let mut sp = match section {
            Section::Gas => Species::gas(sp_name, number(line_no, &kv, "mass")?),
            Section::Site => Species::site(sp_name, number(line_no, &kv, "conc")?),
            Section::Adsorbate => {
                let site = kv
                    .get("site")
                    .ok_or_else(|| syntax(line_no, "missing 'site='"))?;
                Species::adsorbate(sp_name, site)
            }
            Section::None | Section::Steps => unreachable!(),
        };
        if let Some(f) = kv.get("comp") {
            sp = sp
                .with_composition(f)
                .map_err(|e| syntax(line_no, e.to_string()))?;
        }
        if species.iter().any(|s| s.name == sp.name) {
            return Err(TapError::Mechanism(format!(
                "line {line_no}: duplicate species name '{}'",
                sp.name
            )));
        }
        species.push(sp);
    }

    if step_lines.is_empty() {
        return Err(TapError::Mechanism("no reaction steps".into()));
    }
    let index: HashMap<String, usize> = species
        .iter()
        .enumerate()
        .map(|(i, s)| (s.name.clone(), i))
        .collect();

    let mut steps = Vec::with_capacity(step_lines.len());
    for (line_no, line) in &step_lines {
        let line_no = *line_no;
        let (reaction, energies) = line
            .split_once(':')
            .ok_or_else(|| syntax(line_no, "expected ':' between reaction and energies"))?;
        let (lhs, rhs, reversible) = if let Some((l, r)) = reaction.split_once("<->") {
            (l, r, true)
        } else if let Some((l, r)) = reaction.split_once("->") {
            (l, r, false)
        } else {
            return Err(syntax(line_no, "expected '<->' or '->'"));
        };
        let kv = key_values(line_no, &energies.split_whitespace().collect::<Vec<_>>())?;
        steps.push(ReactionStep {
            reactants: parse_side(line_no, lhs, &index)?,
            products: parse_side(line_no, rhs, &index)?,
            delta_g: number(line_no, &kv, "dG")?,
            g_activation: number(line_no, &kv, "Ga")?,
            reversible,
        });
    }

    Mechanism::new(&name, species, steps)
}


#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "[gas]\nC3H8 mass=44.1\nO2 mass=32\n[site]\n* conc=1\n^ conc=1\n[adsorbate]\nC3H8* site=*\nO^ site=^\n";

    #[test]
    fn parses_propane_adsorption() {
        let m = parse_mechanism(&format!("{HEADER}[steps]\nC3H8 + * <-> C3H8* : dG=-0.2 Ga=0.3\n")).unwrap();
        let s = &m.steps[0];
        assert_eq!(s.delta_g, -0.2);
        assert_eq!(s.g_activation, 0.3);
        assert!(s.reversible);
        let idx = |n: &str| m.species_index(n).unwrap();
        assert_eq!(s.reactants, vec![Term { species: idx("C3H8"), coeff: 1 }, Term { species: idx("*"), coeff: 1 }]);
        assert_eq!(s.products, vec![Term { species: idx("C3H8*"), coeff: 1 }]);
    }

    #[test]
    fn parses_second_site_type() {
        let m = parse_mechanism(&format!("{HEADER}[steps]\nO2 + 2^ <-> 2O^ : dG=-0.7 Ga=1.25\n")).unwrap();
        let s = &m.steps[0];
        let hat = m.species_index("^").unwrap();
        assert!(s.reactants.contains(&Term { species: hat, coeff: 2 }));
        assert_eq!(s.products, vec![Term { species: m.species_index("O^").unwrap(), coeff: 2 }]);
        assert_eq!(s.delta_g, -0.7);
    }

    #[test]
    fn empty_steps_rejected() {
        let err = parse_mechanism(&format!("{HEADER}[steps]\n# nothing\n")).unwrap_err();
        assert!(err.to_string().contains("no reaction steps"));
    }

    #[test]
    fn unknown_species_rejected() {
        let err = parse_mechanism(&format!("{HEADER}[steps]\nCO + * <-> CO* : dG=0 Ga=1\n")).unwrap_err();
        assert!(err.to_string().contains("unknown species 'CO'"));
    }

    #[test]
    fn site_imbalance_rejected() {
        let err = parse_mechanism(&format!("{HEADER}[steps]\nO2 + ^ <-> 2O^ : dG=0 Ga=1\n")).unwrap_err();
        assert!(err.to_string().contains("imbalance"), "{err}");
    }

    #[test]
    fn duplicate_species_rejected() {
        let err = parse_mechanism("[gas]\nA mass=1\nA mass=2\n[site]\n* conc=1\n[steps]\nA -> A : dG=0 Ga=0\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn syntax_error_has_line_number() {
        let err = parse_mechanism("[gas]\nA mass=abc\n").unwrap_err();
        match err {
            TapError::Syntax { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn irreversible_arrow_and_comments() {
        let m = parse_mechanism(&format!(
            "{HEADER}\n# comment\n[steps]\nC3H8 + * -> C3H8* : dG=-0.2 Ga=0.3  # trailing\n"
        ))
        .unwrap();
        assert!(!m.steps[0].reversible);
    }
}
