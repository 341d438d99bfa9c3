//! WebAssembly bindings for a single-page demo: simulate a propane/oxygen
//! pump-probe pulse over one of the bundled mechanisms, evaluate Eyring rate
//! constants, and compare the three mechanisms at one design.
//!
//! Each export returns JSON; errors surface as JavaScript exceptions.

use serde::Serialize;
use tap_core::doe::divergence::{hr_divergence, reference_sigma};
use tap_core::fixtures;
use tap_core::mechanism::{rate_constants as eyring, ReactionStep};
use tap_core::{ExperimentDesign, ParameterSet, Simulator};
use wasm_bindgen::prelude::*;

/// Points kept per trace; the page only needs the curve shape.
const MAX_POINTS: usize = 500;

#[derive(Serialize)]
struct Traces {
    time: Vec<f64>,
    gases: Vec<String>,
    flux: Vec<Vec<f64>>,
    integrals: Vec<f64>,
}

#[derive(Serialize)]
struct Divergence {
    total: f64,
    pairs: Vec<(String, String, f64)>,
}

fn design(c3h8: f64, o2: f64, delay: f64, temperature: f64) -> Result<ExperimentDesign, String> {
    let d = ExperimentDesign::pump_probe(c3h8, o2, delay, temperature);
    d.validate().map_err(|e| e.to_string())?;
    Ok(d)
}

fn mechanism(number: u8) -> Result<tap_core::Mechanism, String> {
    match number {
        1..=3 => Ok(fixtures::mechanism(number)),
        n => Err(format!("no bundled mechanism {n}")),
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Outlet flux of bundled mechanism `number` at its tabulated energies.
pub fn simulate_json(number: u8, c3h8: f64, o2: f64, delay: f64, temperature: f64) -> Result<String, String> {
    let mech = mechanism(number)?;
    let d = design(c3h8, o2, delay, temperature)?;
    let flux = Simulator::default()
        .flux(&mech, &d, &ParameterSet::from_mechanism(&mech))
        .map_err(|e| e.to_string())?;
    let stride = flux.len().div_ceil(MAX_POINTS).max(1);
    json(&Traces {
        time: flux.time.iter().step_by(stride).copied().collect(),
        gases: flux.gases.clone(),
        flux: flux.flux.iter().map(|f| f.iter().step_by(stride).copied().collect()).collect(),
        integrals: (0..flux.gases.len()).map(|g| flux.integral(g)).collect(),
    })
}

/// `[k_forward, k_reverse]` in 1/s for a reversible step.
pub fn rate_constants_json(delta_g: f64, g_activation: f64, temperature: f64) -> Result<String, String> {
    let step = ReactionStep {
        reactants: Vec::new(),
        products: Vec::new(),
        delta_g,
        g_activation,
        reversible: true,
    };
    let (kf, kr) = eyring(&step, temperature).map_err(|e| e.to_string())?;
    json(&[kf, kr])
}

/// Divergence between the three bundled mechanisms at one design, with
/// noise at 1% of the largest peak of each gas.
pub fn divergence_json(c3h8: f64, o2: f64, delay: f64, temperature: f64) -> Result<String, String> {
    let models = fixtures::candidate_models().map_err(|e| e.to_string())?;
    let sim = Simulator::default();
    let d = design(c3h8, o2, delay, temperature)?;
    let sigma = reference_sigma(&sim, &models, &fixtures::initial_design(), 0.01).map_err(|e| e.to_string())?;
    let e = hr_divergence(&sim, &models, &d, &sigma).map_err(|e| e.to_string())?;
    json(&Divergence {
        total: e.divergence,
        pairs: e.pairs.into_iter().map(|p| (p.first, p.second, p.value)).collect(),
    })
}

#[wasm_bindgen]
pub fn simulate(number: u8, c3h8: f64, o2: f64, delay: f64, temperature: f64) -> Result<String, JsError> {
    simulate_json(number, c3h8, o2, delay, temperature).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rate_constants(delta_g: f64, g_activation: f64, temperature: f64) -> Result<String, JsError> {
    rate_constants_json(delta_g, g_activation, temperature).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn divergence(c3h8: f64, o2: f64, delay: f64, temperature: f64) -> Result<String, JsError> {
    divergence_json(c3h8, o2, delay, temperature).map_err(|e| JsError::new(&e))
}
