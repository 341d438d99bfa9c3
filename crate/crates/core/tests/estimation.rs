use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tap_core::estimation::{
    covariance_and_ci, fd_gradient, fit, hessian, minimize, objective, FitOptions, FitProblem, HessianMode,
    LeastSquares, Observation, OptimizerOptions, QuadraticSurrogate, Termination,
};
use tap_core::fixtures::{self, initial_design, precision_truth};
use tap_core::linalg::symmetric_eigenvalues;
use tap_core::synthetic::{add_noise, NoiseModel};
use tap_core::{ExperimentDesign, FluxSeries, Mechanism, ParameterSet, Simulator};

fn one_step_inert(gases: &[(&str, f64)]) -> (Mechanism, ExperimentDesign) {
    let mech = Mechanism::inert(gases).unwrap();
    let design = ExperimentDesign::single(gases[0].0, 0.0, 700.0).with_horizon(1e-3);
    (mech, design)
}

fn observed(values: &[f64], gases: &[&str]) -> FluxSeries {
    FluxSeries {
        time: vec![1e-3],
        gases: gases.iter().map(|g| g.to_string()).collect(),
        flux: values.iter().map(|v| vec![*v]).collect(),
    }
}

#[test]
fn objective_single_residual() {
    let (mech, design) = one_step_inert(&[("Ar", 40.0)]);
    let obs = Observation::new(design, observed(&[2.0], &["Ar"]), vec![1.0]).unwrap();
    let j = objective(&Simulator::default(), &mech, &[obs], &ParameterSet::from_mechanism(&mech)).unwrap();
    assert_eq!(j, 2.0);
}

#[test]
fn objective_two_gases() {
    let (mech, design) = one_step_inert(&[("Ar", 40.0), ("Kr", 84.0)]);
    let obs = Observation::new(design, observed(&[1.0, 2.0], &["Ar", "Kr"]), vec![1.0, 2.0]).unwrap();
    let j = objective(&Simulator::default(), &mech, &[obs], &ParameterSet::from_mechanism(&mech)).unwrap();
    assert!((j - 1.0).abs() < 1e-15);
}

fn exp1(sim: &Simulator, mech: &Mechanism, truth: &ParameterSet, sigma: Vec<f64>, seed: Option<u64>) -> Observation {
    let design = initial_design();
    let mut flux = sim.flux(mech, &design, truth).unwrap();
    if let Some(seed) = seed {
        flux = add_noise(&flux, &NoiseModel::absolute(sigma.clone(), seed)).unwrap();
    }
    Observation::new(design, flux, sigma).unwrap()
}

fn exp1_sigma(sim: &Simulator, mech: &Mechanism, truth: &ParameterSet) -> Vec<f64> {
    let flux = sim.flux(mech, &initial_design(), truth).unwrap();
    (0..flux.gases.len()).map(|g| 0.01 * flux.peak(g).1).collect()
}

#[test]
fn objective_vanishes_at_truth_and_is_additive() {
    let sim = Simulator::default();
    let mech = fixtures::mechanism(1);
    let truth = precision_truth();
    let sigma = exp1_sigma(&sim, &mech, &truth);
    let clean = exp1(&sim, &mech, &truth, sigma.clone(), None);
    assert_eq!(objective(&sim, &mech, &[clean], &truth).unwrap(), 0.0);

    let a = exp1(&sim, &mech, &truth, sigma.clone(), Some(1));
    let design_b = ExperimentDesign::pump_probe(2.0, 2.0, 0.3, 650.0);
    let flux_b = add_noise(&sim.flux(&mech, &design_b, &truth).unwrap(), &NoiseModel::absolute(sigma.clone(), 2)).unwrap();
    let b = Observation::new(design_b, flux_b, sigma).unwrap();
    let ja = objective(&sim, &mech, &[a.clone()], &truth).unwrap();
    let jb = objective(&sim, &mech, &[b.clone()], &truth).unwrap();
    let jab = objective(&sim, &mech, &[a, b], &truth).unwrap();
    assert!(ja > 0.0 && jb > 0.0);
    assert_eq!(jab, ja + jb);
}

#[test]
fn mismatched_grid_is_reported() {
    let (mech, design) = one_step_inert(&[("Ar", 40.0)]);
    let mut flux = observed(&[1.0], &["Ar"]);
    flux.time.push(2e-3);
    flux.flux[0].push(0.0);
    let obs = Observation::new(design, flux, vec![1.0]).unwrap();
    assert!(objective(&Simulator::default(), &mech, &[obs], &ParameterSet::from_mechanism(&mech)).is_err());
    assert!(Observation::new(initial_design(), observed(&[1.0], &["Ar"]), vec![1.0, 1.0]).is_err());
}

#[test]
fn finite_difference_gradient_is_richardson_consistent() {
    let sim = Simulator::default();
    let mech = fixtures::mechanism(1);
    let truth = precision_truth();
    let sigma = exp1_sigma(&sim, &mech, &truth);
    let mut obs = exp1(&sim, &mech, &truth, sigma.clone(), Some(5));
    // A shorter record keeps ten gradient pairs affordable.
    obs.design.horizon = 0.5;
    obs.flux.time.truncate(500);
    obs.flux.flux.iter_mut().for_each(|f| f.truncate(500));
    let observations = [obs];
    let problem = FitProblem::new(&sim, &mech, &observations, truth.clone()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let h = 1e-3;
    for _ in 0..10 {
        let theta: Vec<f64> = truth.free_values().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        let exact = problem.gradient(&theta).unwrap();
        let g1 = fd_gradient(&problem, &theta, h).unwrap();
        let g2 = fd_gradient(&problem, &theta, h / 2.0).unwrap();
        let e1 = (&g1 - &exact).norm();
        let e2 = (&g2 - &exact).norm();
        let scale = exact.norm();
        // Central differences: halving h cuts the error about fourfold until
        // solver round-off takes over.
        assert!(e2 <= 0.3 * e1 + 1e-7 * scale, "errors {e1:e} -> {e2:e} (|g| {scale:e})");
        assert!((&g1 - &g2).norm() <= 1e-3 * scale, "h vs h/2 differ by {:e}", (&g1 - &g2).norm());
    }
}

#[test]
fn gauss_newton_errors_scale_with_noise() {
    let sim = Simulator::default();
    let mech = fixtures::mechanism(1);
    let truth = precision_truth();
    let sigma = exp1_sigma(&sim, &mech, &truth);
    let one = [exp1(&sim, &mech, &truth, sigma.clone(), None)];
    let two = [exp1(&sim, &mech, &truth, sigma.iter().map(|s| 2.0 * s).collect(), None)];
    let theta = truth.free_values();
    let p1 = FitProblem::new(&sim, &mech, &one, truth.clone()).unwrap();
    let p2 = FitProblem::new(&sim, &mech, &two, truth.clone()).unwrap();
    let u1 = covariance_and_ci(&hessian(&p1, &theta, HessianMode::GaussNewton).unwrap()).unwrap();
    let u2 = covariance_and_ci(&hessian(&p2, &theta, HessianMode::GaussNewton).unwrap()).unwrap();
    for (a, b) in u1.std_errors.iter().zip(&u2.std_errors) {
        assert!((b / a - 2.0).abs() < 1e-9, "{a} -> {b}");
    }
}

#[test]
fn hessian_modes_agree_at_the_optimum() {
    let sim = Simulator::default();
    let mech = fixtures::mechanism(1);
    let truth = precision_truth();
    let sigma = exp1_sigma(&sim, &mech, &truth);
    let obs = [exp1(&sim, &mech, &truth, sigma, None)];
    let problem = FitProblem::new(&sim, &mech, &obs, truth.clone()).unwrap();
    let theta = truth.free_values();
    let gn = symmetric_eigenvalues(&hessian(&problem, &theta, HessianMode::GaussNewton).unwrap());
    let fd = symmetric_eigenvalues(&hessian(&problem, &theta, HessianMode::default()).unwrap());
    let lead = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (a, b) in gn.iter().zip(&fd) {
        assert_eq!(a.signum(), b.signum(), "eigenvalues {gn:?} vs {fd:?}");
    }
    assert!((lead(&fd) / lead(&gn) - 1.0).abs() < 0.2);
}

#[test]
fn fit_started_at_truth_stops_immediately() {
    let sim = Simulator::default();
    let mech = fixtures::mechanism(1);
    let truth = precision_truth();
    let sigma = exp1_sigma(&sim, &mech, &truth);
    let obs = [exp1(&sim, &mech, &truth, sigma, None)];
    let options = FitOptions { hessian: HessianMode::GaussNewton, ..FitOptions::default() };
    let result = fit(&sim, &mech, &obs, &truth, &options).unwrap();
    assert_eq!(result.iterations, 0);
    assert_eq!(result.termination, Termination::GradientTolerance);
    assert!(result.objective < 1e-20);
    for (a, b) in result.theta_hat.free_values().iter().zip(truth.free_values()) {
        assert!((a - b).abs() < 1e-6);
    }
    for e in &result.estimates {
        assert!((e.ci95 - 1.96 * e.std_error).abs() <= 1e-15 * e.ci95);
    }
}

#[test]
fn small_fit_recovers_two_parameters() {
    let sim = Simulator::default();
    let mech = fixtures::mechanism(1);
    let truth = ParameterSet::from_mechanism(&mech).with_free(&["dG0", "Ga3"]).unwrap();
    let sigma = exp1_sigma(&sim, &mech, &truth);
    let obs = [exp1(&sim, &mech, &truth, sigma, None)];
    let mut start = truth.clone();
    start.set("dG0", -0.1).unwrap();
    start.set("Ga3", 1.62).unwrap();
    let result = fit(&sim, &mech, &obs, &start, &FitOptions::default()).unwrap();
    assert!(result.converged, "{:?}", result.termination);
    assert!((result.theta_hat.get("dG0").unwrap() + 0.2).abs() < 1e-4);
    assert!((result.theta_hat.get("Ga3").unwrap() - 1.54).abs() < 1e-4);
    for w in result.trace.windows(2) {
        assert!(w[1].objective <= w[0].objective);
    }
    let cov = result.covariance_matrix();
    assert!((&cov - cov.transpose()).abs().max() <= 1e-12 * cov.abs().max());
    assert!(symmetric_eigenvalues(&cov).iter().all(|l| *l > 0.0));
}

#[test]
fn fit_rejects_start_outside_bounds() {
    let sim = Simulator::default();
    let mech = fixtures::mechanism(1);
    let truth = precision_truth();
    let sigma = exp1_sigma(&sim, &mech, &truth);
    let obs = [exp1(&sim, &mech, &truth, sigma, None)];
    let mut start = truth.clone();
    start.set("dG1", -5.0).unwrap();
    assert!(fit(&sim, &mech, &obs, &start, &FitOptions::default()).is_err());
}

#[test]
fn quadratic_hessians() {
    let one = QuadraticSurrogate::new(DMatrix::from_element(1, 1, 2f64.sqrt()), vec![1.0]);
    let h = hessian(&one, &[0.3], HessianMode::default()).unwrap();
    assert!((h[(0, 0)] - 2.0).abs() < 1e-6);
    let two = QuadraticSurrogate::new(DMatrix::from_diagonal(&nalgebra::dvector![2f64.sqrt(), 8f64.sqrt()]), vec![0.0, 0.0]);
    let h = hessian(&two, &[0.4, -0.2], HessianMode::default()).unwrap();
    assert!((h - DMatrix::from_diagonal(&nalgebra::dvector![2.0, 8.0])).abs().max() < 1e-6);
}

#[test]
fn covariance_examples() {
    let u = covariance_and_ci(&DMatrix::from_element(1, 1, 2.0)).unwrap();
    assert!((u.std_errors[0] - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((u.std_errors[0] - 0.7071).abs() < 1e-4);
    let u = covariance_and_ci(&DMatrix::from_diagonal(&nalgebra::dvector![2.0, 8.0])).unwrap();
    assert!((u.std_errors[0] - 0.7071).abs() < 1e-4);
    assert!((u.std_errors[1] - 0.3536).abs() < 1e-4);
    assert!((u.ci95[1] - 1.96 * u.std_errors[1]).abs() < 1e-15);
    assert!(!u.rank_deficient);
    let err = covariance_and_ci(&DMatrix::from_diagonal(&nalgebra::dvector![2.0, -8.0])).unwrap_err();
    assert!(err.to_string().contains("not at a minimum"));
    let singular = covariance_and_ci(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
    assert!(singular.rank_deficient);
}

proptest! {
    #[test]
    fn surrogate_minimum_is_found(
        m in proptest::collection::vec(-3.0f64..3.0, 3),
        start in proptest::collection::vec(-3.0f64..3.0, 3),
        diag in proptest::collection::vec(0.5f64..5.0, 3),
    ) {
        let a = DMatrix::from_fn(4, 3, |i, j| if i == j { diag[j] } else { 0.1 * (i + 2 * j) as f64 });
        let problem = QuadraticSurrogate::new(a, m.clone());
        let options = OptimizerOptions { max_step: f64::INFINITY, gradient_tol: 1e-12, ..OptimizerOptions::default() };
        let min = minimize(&problem, &start, &options).unwrap();
        for (t, want) in min.theta.iter().zip(&m) {
            prop_assert!((t - want).abs() < 1e-8);
        }
        for w in min.trace.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective);
        }
    }
}
