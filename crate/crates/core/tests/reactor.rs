use tap_core::constants::NMOL_PER_MOL;
use tap_core::fixtures::{self, initial_design, precision_truth};
use tap_core::reactor::{inert_reference_curve, knudsen_diffusivity, outlet_flux, SolverOptions};
use tap_core::{ExperimentDesign, Mechanism, ParameterSet, ReactorGeometry, Simulator};

fn inert() -> Mechanism {
    Mechanism::inert(&[("Ar", 40.0)]).unwrap()
}

#[test]
fn zero_intensity_gives_zero_flux() {
    let mech = fixtures::mechanism(1);
    let design = ExperimentDesign::pump_probe(0.0, 0.0, 0.0, 700.0);
    let flux = Simulator::default().flux(&mech, &design, &ParameterSet::from_mechanism(&mech)).unwrap();
    assert_eq!(flux.gases.len(), 5);
    assert_eq!(flux.len(), 2500);
    assert!(flux.flux.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn inert_pulse_matches_analytic_curve() {
    let geometry = ReactorGeometry::default();
    let mech = inert();
    let design = ExperimentDesign::single("Ar", 1.0, 700.0);
    let flux = Simulator::default().flux(&mech, &design, &ParameterSet::from_mechanism(&mech)).unwrap();
    // Effective bed diffusivity: Knudsen value times the void fraction.
    let eps = geometry.zone_void_fractions[0];
    let d = eps * knudsen_diffusivity(40.0, 700.0, &geometry).unwrap();
    let oracle = inert_reference_curve(&geometry, d, 1.0, &flux.time).unwrap();

    assert!((flux.integral(0) - 1.0).abs() < 0.01, "integral {}", flux.integral(0));
    let (_, peak) = oracle.peak(0);
    let worst = flux.flux[0].iter().zip(&oracle.flux[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.02 * peak, "worst deviation {worst} vs peak {peak}");

    let (t_peak, _) = flux.peak(0);
    let tau = t_peak * d / (eps * geometry.length().powi(2));
    assert!((tau - 1.0 / 6.0).abs() < 0.005, "dimensionless peak time {tau}");
}

#[test]
fn heavier_gas_peaks_later() {
    let mech = Mechanism::inert(&[("Ar", 40.0), ("Kr", 160.0)]).unwrap();
    let design = ExperimentDesign {
        pulses: vec![
            tap_core::reactor::Pulse { gas: "Ar".into(), intensity: 1.0, delay: 0.0 },
            tap_core::reactor::Pulse { gas: "Kr".into(), intensity: 1.0, delay: 0.0 },
        ],
        temperature: 700.0,
        horizon: 2.5,
    };
    let flux = Simulator::default().flux(&mech, &design, &ParameterSet::from_mechanism(&mech)).unwrap();
    let ratio = flux.peak(1).0 / flux.peak(0).0;
    assert!((ratio - 2.0).abs() < 0.05, "peak time ratio {ratio}");
}

#[test]
fn mechanism_one_produces_all_products() {
    let mech = fixtures::mechanism(1);
    let flux = Simulator::default().flux(&mech, &initial_design(), &precision_truth()).unwrap();
    for gas in ["C3H6", "H2O", "CO2"] {
        let g = flux.gases.iter().position(|n| n == gas).unwrap();
        assert!(flux.integral(g) > 1e-4, "{gas} integral {}", flux.integral(g));
    }
    flux.validate().unwrap();
}

#[test]
fn carbon_and_sites_are_conserved() {
    let mech = fixtures::mechanism(1);
    let result = Simulator::default().run(&mech, &initial_design(), &precision_truth()).unwrap();
    let state = &result.final_state;
    let mut carbon = 0.0;
    for (g, sp) in mech.gases().iter().enumerate() {
        let c = sp.element_count("C") as f64;
        carbon += c * (result.flux.integral(g) + state.gas_inventory(g) * NMOL_PER_MOL);
    }
    for (s, sp) in mech.surface_species().iter().enumerate() {
        carbon += sp.element_count("C") as f64 * state.surface_inventory(s) * NMOL_PER_MOL;
    }
    let injected = 3.0 * initial_design().intensity("C3H8");
    assert!((carbon / injected - 1.0).abs() < 0.02, "carbon {carbon} vs {injected}");
    assert!(result.max_site_drift <= 1e-8, "site drift {}", result.max_site_drift);
}

#[test]
fn refining_the_grid_changes_integrals_little() {
    let mech = fixtures::mechanism(1);
    let params = precision_truth();
    let design = initial_design();
    let coarse = Simulator::default().flux(&mech, &design, &params).unwrap();
    let options = SolverOptions { nodes: 239, dt: 5e-4, ..SolverOptions::default() };
    let fine = Simulator::new(ReactorGeometry::default(), options).flux(&mech, &design, &params).unwrap();
    for g in 0..coarse.gases.len() {
        let (a, b) = (coarse.integral(g), fine.integral(g));
        assert!((a - b).abs() <= 0.01 * b.abs().max(1e-6), "{}: {a} vs {b}", coarse.gases[g]);
    }
}

#[test]
fn simulation_is_deterministic() {
    let mech = fixtures::mechanism(2);
    let params = ParameterSet::from_mechanism(&mech);
    let design = ExperimentDesign::pump_probe(2.0, 1.0, 0.3, 650.0);
    let a = Simulator::default().flux(&mech, &design, &params).unwrap();
    let b = Simulator::default().flux(&mech, &design, &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tangents_match_central_differences() {
    let mech = fixtures::mechanism(1);
    let sim = Simulator::default();
    let params = precision_truth();
    let design = initial_design();
    let (_, tangents) = sim.flux_with_tangents(&mech, &design, &params).unwrap();
    let h = 1e-4;
    let theta = params.free_values();
    for (k, tangent) in tangents.iter().enumerate() {
        let mut up = theta.clone();
        up[k] += h;
        let mut down = theta.clone();
        down[k] -= h;
        let fu = sim.flux(&mech, &design, &params.with_free_values(&up)).unwrap();
        let fd = sim.flux(&mech, &design, &params.with_free_values(&down)).unwrap();
        for g in 0..fu.gases.len() {
            let fd_col: Vec<f64> = fu.flux[g].iter().zip(&fd.flux[g]).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let norm = fd_col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = fd_col.iter().zip(&tangent.flux[g]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= 1e-3 * norm + 1e-9, "param {k} gas {g}: |diff| {diff} vs |fd| {norm}");
        }
    }
}

#[test]
fn outlet_flux_examples() {
    let geometry = ReactorGeometry::default();
    assert_eq!(outlet_flux(&[0.0], &[0.002], &geometry), vec![0.0]);
    let (c0, l) = (1e-3, geometry.length());
    let f = outlet_flux(&[-c0 / l], &[0.002], &geometry)[0];
    let expected = 0.002 * 0.4 * geometry.cross_section_area * c0 / l * NMOL_PER_MOL;
    assert!((f - expected).abs() < 1e-12 * expected);
}

#[test]
fn invalid_inputs_are_rejected() {
    let mech = inert();
    let params = ParameterSet::from_mechanism(&mech);
    let sim = Simulator::default();
    let mut bad_delay = ExperimentDesign::single("Ar", 1.0, 700.0).with_horizon(1.0);
    bad_delay.pulses[0].delay = 1.0;
    assert!(sim.flux(&mech, &bad_delay, &params).is_err());
    assert!(sim.flux(&mech, &ExperimentDesign::single("Ar", -1.0, 700.0), &params).is_err());
    assert!(sim.flux(&mech, &ExperimentDesign::single("Ar", 1.0, 0.0), &params).is_err());
    let mut geometry = ReactorGeometry::default();
    geometry.zone_void_fractions[1] = 1.0;
    let sim = Simulator::new(geometry, SolverOptions::default());
    assert!(sim.flux(&mech, &ExperimentDesign::single("Ar", 1.0, 700.0), &params).is_err());
}
