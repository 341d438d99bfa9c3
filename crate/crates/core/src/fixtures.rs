//! Bundled oxidative propane dehydrogenation case study: three candidate
//! mechanisms that differ only in active-site structure.

use crate::doe::divergence::CandidateModel;
use crate::error::Result;
use crate::mechanism::{parse_mechanism, Mechanism};
use crate::params::ParameterSet;
use crate::reactor::ExperimentDesign;

pub const MECH1: &str = include_str!("../fixtures/opdh_mech1.mech");
pub const MECH2: &str = include_str!("../fixtures/opdh_mech2.mech");
pub const MECH3: &str = include_str!("../fixtures/opdh_mech3.mech");

/// Identifiable subset of mechanism 1 used for fitting and design.
pub const PRECISION_PARAMETERS: [&str; 7] = ["dG0", "dG1", "dG2", "Ga1", "Ga3", "Ga4", "Ga5"];

/// Starting guesses for free reaction and activation energies, eV.
pub const INITIAL_DELTA_G: f64 = -0.3;
pub const INITIAL_ACTIVATION: f64 = 1.5;

/// Parsed bundled mechanism 1, 2 or 3.
///
/// # Panics
/// On any other number; the bundled files are validated by tests.
pub fn mechanism(number: u8) -> Mechanism {
    let text = match number {
        1 => MECH1,
        2 => MECH2,
        3 => MECH3,
        n => panic!("no bundled mechanism {n}"),
    };
    parse_mechanism(text).expect("bundled mechanism parses")
}

/// Mechanism-1 truth with the seven identifiable parameters free.
pub fn precision_truth() -> ParameterSet {
    ParameterSet::from_mechanism(&mechanism(1))
        .with_free(&PRECISION_PARAMETERS)
        .expect("fixture parameter names")
}

/// Initial experiment: 1 nmol propane and oxygen co-pulsed at 700 K.
pub fn initial_design() -> ExperimentDesign {
    ExperimentDesign::pump_probe(1.0, 1.0, 0.0, 700.0)
}

/// The three mechanisms at their tabulated energies, labelled `mech1..3`,
/// each with the seven fitted parameters free.
pub fn candidate_models() -> Result<Vec<CandidateModel>> {
    (1..=3)
        .map(|n| {
            let mech = mechanism(n);
            let params = ParameterSet::from_mechanism(&mech).with_free(&PRECISION_PARAMETERS)?;
            CandidateModel::new(&format!("mech{n}"), mech, params)
        })
        .collect()
}
