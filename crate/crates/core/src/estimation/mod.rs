//! Weighted least-squares fitting of kinetic parameters to observed outlet
//! fluxes, with Hessian-based parametric uncertainty.

mod optimize;

pub use optimize::{
    fd_gradient, minimize, Iterate, LeastSquares, Minimum, Optimizer, OptimizerOptions, QuadraticSurrogate,
    Termination,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::linalg::{symmetric_eigenvalues, symmetric_inverse, symmetrize};
use crate::mechanism::Mechanism;
use crate::params::ParameterSet;
use crate::reactor::{ExperimentDesign, FluxSeries, Simulator};

/// Measured (or synthetic) outlet fluxes of one experiment with the noise
/// level of each gas. Gases with `sigma = 0` carry no weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub design: ExperimentDesign,
    pub flux: FluxSeries,
    /// nmol/s, in the flux's gas order.
    pub sigma: Vec<f64>,
}

impl Observation {
    pub fn new(design: ExperimentDesign, flux: FluxSeries, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != flux.gases.len() {
            return Err(TapError::invalid("one noise sigma per observed gas is required"));
        }
        if sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(TapError::invalid("noise sigma must be non-negative"));
        }
        Ok(Observation { design, flux, sigma })
    }

    /// Number of weighted samples.
    pub fn sample_count(&self) -> usize {
        self.sigma.iter().filter(|s| **s > 0.0).count() * self.flux.len()
    }

    fn check_grid(&self, sim: &FluxSeries) -> Result<()> {
        if sim.gases != self.flux.gases || sim.len() != self.flux.len() {
            return Err(TapError::invalid(format!(
                "observation grid ({} gases x {} samples) does not match the simulation ({} x {})",
                self.flux.gases.len(),
                self.flux.len(),
                sim.gases.len(),
                sim.len()
            )));
        }
        Ok(())
    }
}

/// Adds `(f_sim - f_obs)/sigma` for every weighted sample.
fn push_residuals(obs: &Observation, sim: &FluxSeries, out: &mut Vec<f64>) {
    for (g, &s) in obs.sigma.iter().enumerate() {
        if s > 0.0 {
            out.extend(sim.flux[g].iter().zip(&obs.flux.flux[g]).map(|(f, o)| (f - o) / s));
        }
    }
}

/// `J = 1/2 sum_experiments sum_t sum_gas ((f_sim - f_obs)/sigma)^2`.
pub fn objective(sim: &Simulator, mech: &Mechanism, observations: &[Observation], params: &ParameterSet) -> Result<f64> {
    let mut total = 0.0;
    for obs in observations {
        let flux = sim.flux(mech, &obs.design, params).map_err(|e| TapError::in_design(&obs.design, e))?;
        obs.check_grid(&flux)?;
        let mut r = Vec::with_capacity(obs.sample_count());
        push_residuals(obs, &flux, &mut r);
        total += 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total)
}

/// The fitting problem over the free entries of `template`.
pub struct FitProblem<'a> {
    pub sim: &'a Simulator,
    pub mech: &'a Mechanism,
    pub observations: &'a [Observation],
    pub template: ParameterSet,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        sim: &'a Simulator,
        mech: &'a Mechanism,
        observations: &'a [Observation],
        template: ParameterSet,
    ) -> Result<Self> {
        template.validate(mech)?;
        template.check_bounds()?;
        if observations.is_empty() {
            return Err(TapError::invalid("at least one observation is required"));
        }
        Ok(FitProblem { sim, mech, observations, template })
    }

    pub fn params(&self, theta: &[f64]) -> ParameterSet {
        self.template.with_free_values(theta)
    }

    pub fn sample_count(&self) -> usize {
        self.observations.iter().map(Observation::sample_count).sum()
    }
}

impl LeastSquares for FitProblem<'_> {
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.template.free_bounds()
    }

    fn residuals(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let params = self.params(theta);
        let mut r = Vec::with_capacity(self.sample_count());
        for obs in self.observations {
            let flux = self.sim.flux(self.mech, &obs.design, &params).map_err(|e| TapError::in_design(&obs.design, e))?;
            obs.check_grid(&flux)?;
            push_residuals(obs, &flux, &mut r);
        }
        Ok(DVector::from_vec(r))
    }

    fn residuals_and_jacobian(&self, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let params = self.params(theta);
        let k = theta.len();
        let n = self.sample_count();
        let mut r = Vec::with_capacity(n);
        let mut jac = DMatrix::zeros(n, k);
        for obs in self.observations {
            let (flux, tangents) = self
                .sim
                .flux_with_tangents(self.mech, &obs.design, &params)
                .map_err(|e| TapError::in_design(&obs.design, e))?;
            obs.check_grid(&flux)?;
            let row0 = r.len();
            push_residuals(obs, &flux, &mut r);
            for (p, tan) in tangents.iter().enumerate() {
                let mut row = row0;
                for (g, &s) in obs.sigma.iter().enumerate() {
                    if s > 0.0 {
                        for v in &tan.flux[g] {
                            jac[(row, p)] = v / s;
                            row += 1;
                        }
                    }
                }
            }
        }
        Ok((DVector::from_vec(r), jac))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Central differences (step in eV) of the exact gradient of `J`.
    FiniteDifference { step: f64 },
    /// `sum sigma^-2 Q^T Q`.
    GaussNewton,
}

impl Default for HessianMode {
    fn default() -> Self {
        HessianMode::FiniteDifference { step: 1e-4 }
    }
}

/// Hessian of `J` at `theta`, symmetrised.
pub fn hessian<P: LeastSquares + ?Sized>(problem: &P, theta: &[f64], mode: HessianMode) -> Result<DMatrix<f64>> {
    let k = theta.len();
    let h = match mode {
        HessianMode::GaussNewton => {
            let (_, jac) = problem.residuals_and_jacobian(theta)?;
            jac.tr_mul(&jac)
        }
        HessianMode::FiniteDifference { step } => {
            if !(step > 0.0) {
                return Err(TapError::invalid("Hessian step must be positive"));
            }
            let mut h = DMatrix::zeros(k, k);
            let mut probe = theta.to_vec();
            for i in 0..k {
                probe[i] = theta[i] + step;
                let up = problem.gradient(&probe)?;
                probe[i] = theta[i] - step;
                let down = problem.gradient(&probe)?;
                probe[i] = theta[i];
                h.set_column(i, &((up - down) / (2.0 * step)));
            }
            h
        }
    };
    let h = symmetrize(&h);
    for i in 0..k {
        for j in 0..k {
            if !h[(i, j)].is_finite() {
                return Err(TapError::numerical(format!("non-finite Hessian entry for parameters ({i}, {j})")));
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Uncertainty {
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub ci95: Vec<f64>,
    /// The Hessian was singular and a pseudo-inverse was used.
    pub rank_deficient: bool,
}

/// `Sigma = H^-1` (pseudo-inverse if singular), `sigma_i = sqrt(Sigma_ii)`,
/// `ci95_i = 1.96 sigma_i`.
pub fn covariance_and_ci(h: &DMatrix<f64>) -> Result<Uncertainty> {
    if !h.is_square() {
        return Err(TapError::invalid("Hessian must be square"));
    }
    let (covariance, rank_deficient) = symmetric_inverse(h, 1e-14);
    let mut std_errors = Vec::with_capacity(h.nrows());
    for i in 0..h.nrows() {
        let v = covariance[(i, i)];
        if v < 0.0 {
            return Err(TapError::numerical(format!(
                "not at a minimum: covariance diagonal {i} is negative ({v:e})"
            )));
        }
        std_errors.push(v.sqrt());
    }
    let ci95 = std_errors.iter().map(|s| 1.96 * s).collect();
    Ok(Uncertainty { covariance, std_errors, ci95, rank_deficient })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub optimizer: OptimizerOptions,
    pub hessian: HessianMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { optimizer: OptimizerOptions::default(), hessian: HessianMode::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParameterSet,
    pub objective: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub sample_count: usize,
    /// Row-major k x k, per eV^2.
    pub hessian: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub estimates: Vec<ParameterEstimate>,
    pub hessian_mode: HessianMode,
    pub rank_deficient: bool,
    pub warnings: Vec<String>,
    pub trace: Vec<Iterate>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

impl FitResult {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        matrix(&self.covariance)
    }

    pub fn hessian_matrix(&self) -> DMatrix<f64> {
        matrix(&self.hessian)
    }

    pub fn free_names(&self) -> Vec<String> {
        self.estimates.iter().map(|e| e.name.clone()).collect()
    }

    pub fn ci95(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|e| e.name == name).map(|e| e.ci95)
    }
}

/// Local minimiser of `J` over the free parameters of `initial`, without
/// uncertainty quantification.
pub fn optimize(
    sim: &Simulator,
    mech: &Mechanism,
    observations: &[Observation],
    initial: &ParameterSet,
    options: &OptimizerOptions,
) -> Result<(ParameterSet, Minimum)> {
    let problem = FitProblem::new(sim, mech, observations, initial.clone())?;
    let min = minimize(&problem, &initial.free_values(), options)?;
    Ok((problem.params(&min.theta), min))
}

/// Local weighted least-squares fit of the free parameters of `initial`,
/// followed by Hessian-based uncertainty at the optimum.
pub fn fit(
    sim: &Simulator,
    mech: &Mechanism,
    observations: &[Observation],
    initial: &ParameterSet,
    options: &FitOptions,
) -> Result<FitResult> {
    let problem = FitProblem::new(sim, mech, observations, initial.clone())?;
    let min = minimize(&problem, &initial.free_values(), &options.optimizer)?;
    let mut warnings = Vec::new();
    if !min.converged() {
        warnings.push(format!("optimizer stopped after {} iterations without converging", min.iterations));
    }
    let mut mode = options.hessian;
    let mut h = hessian(&problem, &min.theta, mode)?;
    let unc = match covariance_and_ci(&h) {
        Ok(u) => u,
        Err(e) if mode != HessianMode::GaussNewton => {
            warnings.push(format!("finite-difference Hessian unusable ({e}); using the Gauss-Newton approximation"));
            mode = HessianMode::GaussNewton;
            h = hessian(&problem, &min.theta, mode)?;
            covariance_and_ci(&h)?
        }
        Err(e) => return Err(e),
    };
    if unc.rank_deficient {
        warnings.push("Hessian is singular; covariance from its pseudo-inverse".to_string());
    }
    if symmetric_eigenvalues(&h).first().is_some_and(|&l| l < 0.0) {
        warnings.push("Hessian is indefinite at the reported optimum".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let theta_hat = problem.params(&min.theta);
    let estimates = theta_hat
        .free_names()
        .into_iter()
        .zip(&min.theta)
        .enumerate()
        .map(|(i, (name, &value))| ParameterEstimate { name, value, std_error: unc.std_errors[i], ci95: unc.ci95[i] })
        .collect();
    Ok(FitResult {
        theta_hat,
        objective: min.objective,
        converged: min.converged(),
        termination: min.termination,
        iterations: min.iterations,
        sample_count: problem.sample_count(),
        hessian: rows(&h),
        covariance: rows(&unc.covariance),
        estimates,
        hessian_mode: mode,
        rank_deficient: unc.rank_deficient,
        warnings,
        trace: min.trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSensitivity {
    pub name: String,
    /// Largest relative L2 change of any gas's flux per eV.
    pub sensitivity: f64,
    pub identifiable: bool,
}

pub const SENSITIVITY_THRESHOLD: f64 = 1e-3;

/// Screens every energy of `params` (free or not): for each, the largest
/// over gases of `|df_g/dtheta|_2 / |f_g|_2`, flagged identifiable above
/// [`SENSITIVITY_THRESHOLD`]. Sorted by decreasing sensitivity.
pub fn sensitivity_screen(
    sim: &Simulator,
    mech: &Mechanism,
    design: &ExperimentDesign,
    params: &ParameterSet,
) -> Result<Vec<ParameterSensitivity>> {
    let mut all = params.clone();
    for e in &mut all.entries {
        e.free = true;
        e.lower = f64::NEG_INFINITY;
        e.upper = f64::INFINITY;
    }
    let (flux, tangents) = sim.flux_with_tangents(mech, design, &all)?;
    let norms: Vec<f64> = flux.flux.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut out: Vec<ParameterSensitivity> = all
        .free_names()
        .into_iter()
        .zip(&tangents)
        .map(|(name, tan)| {
            let sensitivity = tan
                .flux
                .iter()
                .zip(&norms)
                .filter(|(_, n)| **n > 0.0)
                .map(|(d, n)| d.iter().map(|v| v * v).sum::<f64>().sqrt() / n)
                .fold(0.0, f64::max);
            ParameterSensitivity { name, sensitivity, identifiable: sensitivity > SENSITIVITY_THRESHOLD }
        })
        .collect();
    out.sort_by(|a, b| b.sensitivity.total_cmp(&a.sensitivity));
    Ok(out)
}
