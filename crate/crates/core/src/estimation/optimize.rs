//! Bound-constrained local minimisation of `J = 1/2 |r(theta)|^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};

/// A weighted least-squares problem over a box-bounded parameter vector.
pub trait LeastSquares {
    fn bounds(&self) -> Vec<(f64, f64)>;

    /// Weighted residuals `r`, so that `J = 1/2 r.r`.
    fn residuals(&self, theta: &[f64]) -> Result<DVector<f64>>;

    /// Residuals and their Jacobian `dr/dtheta` (rows: residuals).
    fn residuals_and_jacobian(&self, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)>;

    fn objective(&self, theta: &[f64]) -> Result<f64> {
        Ok(0.5 * self.residuals(theta)?.norm_squared())
    }

    fn gradient(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let (r, jac) = self.residuals_and_jacobian(theta)?;
        Ok(jac.tr_mul(&r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Levenberg-Marquardt on the residual Jacobian.
    LevenbergMarquardt,
    /// Projected BFGS with central finite-difference gradients of `J`.
    Bfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub method: Optimizer,
    pub max_iterations: usize,
    /// Converged when the projected gradient's infinity norm falls below this.
    pub gradient_tol: f64,
    /// Converged when an accepted step changes `J` by less than this, relatively.
    pub objective_tol: f64,
    /// Converged when no step longer than this (eV) can reduce `J`.
    pub step_tol: f64,
    /// Finite-difference step for BFGS gradients, eV.
    pub gradient_step: f64,
    /// Largest change of any parameter in one iteration, eV. Rate constants
    /// are exponential in the energies, so long Gauss-Newton steps tend to
    /// land in distant basins.
    pub max_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            method: Optimizer::LevenbergMarquardt,
            max_iterations: 100,
            gradient_tol: 1e-6,
            objective_tol: 1e-10,
            step_tol: 1e-10,
            gradient_step: 1e-5,
            max_step: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub termination: Termination,
    pub iterations: usize,
    /// Accepted iterates; objectives are non-increasing.
    pub trace: Vec<Iterate>,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

fn project(theta: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in theta.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn active_set(theta: &[f64], g: &DVector<f64>, bounds: &[(f64, f64)]) -> Vec<bool> {
    theta
        .iter()
        .zip(g.iter())
        .zip(bounds)
        .map(|((&t, &gi), &(lo, hi))| (t <= lo && gi > 0.0) || (t >= hi && gi < 0.0))
        .collect()
}

/// Infinity norm of the gradient with components that push into an active
/// bound removed.
fn projected_gradient_norm(theta: &[f64], g: &DVector<f64>, bounds: &[(f64, f64)]) -> f64 {
    let active = active_set(theta, g, bounds);
    g.iter().zip(active).map(|(gi, a)| if a { 0.0 } else { gi.abs() }).fold(0.0, f64::max)
}

pub fn minimize<P: LeastSquares + ?Sized>(problem: &P, initial: &[f64], options: &OptimizerOptions) -> Result<Minimum> {
    let bounds = problem.bounds();
    if bounds.len() != initial.len() {
        return Err(TapError::invalid("bounds and initial vector differ in length"));
    }
    if initial.iter().zip(&bounds).any(|(v, (lo, hi))| !(v >= lo && v <= hi)) {
        return Err(TapError::invalid("initial parameters must lie within their bounds"));
    }
    match options.method {
        Optimizer::LevenbergMarquardt => levenberg_marquardt(problem, initial, &bounds, options),
        Optimizer::Bfgs => bfgs(problem, initial, &bounds, options),
    }
}

fn levenberg_marquardt<P: LeastSquares + ?Sized>(
    problem: &P,
    initial: &[f64],
    bounds: &[(f64, f64)],
    options: &OptimizerOptions,
) -> Result<Minimum> {
    let k = initial.len();
    let mut theta = initial.to_vec();
    let (mut r, mut jac) = problem.residuals_and_jacobian(&theta)?;
    let mut objective = 0.5 * r.norm_squared();
    let mut trace = Vec::new();
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    for iteration in 0..options.max_iterations {
        let g = jac.tr_mul(&r);
        let gnorm = projected_gradient_norm(&theta, &g, bounds);
        trace.push(Iterate { iteration, objective, gradient_norm: gnorm, theta: theta.clone() });
        if gnorm < options.gradient_tol || objective == 0.0 {
            return Ok(done(theta, objective, Termination::GradientTolerance, iteration, trace));
        }
        let jtj = jac.tr_mul(&jac);
        let scale: Vec<f64> = (0..k).map(|i| jtj[(i, i)].max(1e-12 * jtj.diagonal().max())).collect();
        // Parameters held at a bound by the gradient drop out of the step.
        let active = active_set(&theta, &g, bounds);
        let mut rhs = -&g;
        for i in 0..k {
            if active[i] {
                rhs[i] = 0.0;
            }
        }
        // Inner loop: raise the damping until a step lowers J.
        loop {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += lambda * scale[i];
                if active[i] {
                    a.row_mut(i).fill(0.0);
                    a.column_mut(i).fill(0.0);
                    a[(i, i)] = 1.0;
                }
            }
            let step = match a.cholesky() {
                Some(ch) => cap(ch.solve(&rhs), options.max_step),
                None => {
                    lambda *= nu;
                    nu *= 2.0;
                    if lambda > 1e20 {
                        return Ok(done(theta, objective, Termination::StepTolerance, iteration, trace));
                    }
                    continue;
                }
            };
            let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            project(&mut trial, bounds);
            let moved = trial.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if moved < options.step_tol {
                return Ok(done(theta, objective, Termination::StepTolerance, iteration, trace));
            }
            let trial_r = match problem.residuals(&trial) {
                Ok(r) => r,
                Err(e) => {
                    log::debug!("trial point rejected: {e}");
                    lambda *= nu;
                    nu *= 2.0;
                    continue;
                }
            };
            let trial_obj = 0.5 * trial_r.norm_squared();
            if trial_obj.is_finite() && trial_obj < objective {
                let rel = (objective - trial_obj) / objective.max(f64::MIN_POSITIVE);
                // Gain ratio against the linear model decides the damping update.
                let d = DVector::from_iterator(k, trial.iter().zip(&theta).map(|(a, b)| a - b));
                let predicted = -(g.dot(&d) + 0.5 * d.dot(&(&jtj * &d)));
                let rho = if predicted > 0.0 { (objective - trial_obj) / predicted } else { 0.0 };
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                theta = trial;
                objective = trial_obj;
                let (nr, nj) = problem.residuals_and_jacobian(&theta)?;
                r = nr;
                jac = nj;
                if rel < options.objective_tol {
                    let g = jac.tr_mul(&r);
                    let gnorm = projected_gradient_norm(&theta, &g, bounds);
                    trace.push(Iterate { iteration: iteration + 1, objective, gradient_norm: gnorm, theta: theta.clone() });
                    return Ok(done(theta, objective, Termination::ObjectiveTolerance, iteration + 1, trace));
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e20 {
                return Ok(done(theta, objective, Termination::StepTolerance, iteration, trace));
            }
        }
    }
    let iterations = options.max_iterations;
    Ok(done(theta, objective, Termination::MaxIterations, iterations, trace))
}

/// Shortens `step` so that no component exceeds `max` in magnitude.
fn cap(step: DVector<f64>, max: f64) -> DVector<f64> {
    let big = step.amax();
    if big > max {
        step * (max / big)
    } else {
        step
    }
}

fn done(theta: Vec<f64>, objective: f64, termination: Termination, iterations: usize, trace: Vec<Iterate>) -> Minimum {
    Minimum { theta, objective, termination, iterations, trace }
}

/// Central finite-difference gradient of `J`.
pub fn fd_gradient<P: LeastSquares + ?Sized>(problem: &P, theta: &[f64], step: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(theta.len());
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let up = problem.objective(&probe)?;
        probe[i] = theta[i] - step;
        let down = problem.objective(&probe)?;
        probe[i] = theta[i];
        g[i] = (up - down) / (2.0 * step);
    }
    Ok(g)
}

fn bfgs<P: LeastSquares + ?Sized>(
    problem: &P,
    initial: &[f64],
    bounds: &[(f64, f64)],
    options: &OptimizerOptions,
) -> Result<Minimum> {
    let k = initial.len();
    let mut theta = initial.to_vec();
    let mut objective = problem.objective(&theta)?;
    let mut g = fd_gradient(problem, &theta, options.gradient_step)?;
    let mut inv_h = DMatrix::<f64>::identity(k, k);
    let mut trace = Vec::new();
    for iteration in 0..options.max_iterations {
        let gnorm = projected_gradient_norm(&theta, &g, bounds);
        trace.push(Iterate { iteration, objective, gradient_norm: gnorm, theta: theta.clone() });
        if gnorm < options.gradient_tol || objective == 0.0 {
            return Ok(done(theta, objective, Termination::GradientTolerance, iteration, trace));
        }
        let mut dir = -(&inv_h * &g);
        if dir.dot(&g) >= 0.0 {
            inv_h = DMatrix::identity(k, k);
            dir = -g.clone();
        }
        for (i, a) in active_set(&theta, &g, bounds).into_iter().enumerate() {
            if a {
                dir[i] = 0.0;
            }
        }
        let dir = cap(dir, options.max_step);
        // Armijo backtracking along the projected path.
        let mut alpha = 1.0;
        let accepted = loop {
            let mut trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + alpha * d).collect();
            project(&mut trial, bounds);
            let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            if s.iter().map(|v| v.abs()).fold(0.0, f64::max) < options.step_tol {
                break None;
            }
            let decrease: f64 = s.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            if let Ok(f) = problem.objective(&trial) {
                if f.is_finite() && f <= objective + 1e-4 * decrease && f < objective {
                    break Some((trial, f));
                }
            }
            alpha *= 0.5;
        };
        let Some((trial, f)) = accepted else {
            return Ok(done(theta, objective, Termination::StepTolerance, iteration, trace));
        };
        let rel = (objective - f) / objective.max(f64::MIN_POSITIVE);
        let g_new = fd_gradient(problem, &trial, options.gradient_step)?;
        let s = DVector::from_iterator(k, trial.iter().zip(&theta).map(|(a, b)| a - b));
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            inv_h = &left * &inv_h * &right + rho * &s * s.transpose();
        }
        theta = trial;
        objective = f;
        g = g_new;
        if rel < options.objective_tol {
            let gnorm = projected_gradient_norm(&theta, &g, bounds);
            trace.push(Iterate { iteration: iteration + 1, objective, gradient_norm: gnorm, theta: theta.clone() });
            return Ok(done(theta, objective, Termination::ObjectiveTolerance, iteration + 1, trace));
        }
    }
    let iterations = options.max_iterations;
    Ok(done(theta, objective, Termination::MaxIterations, iterations, trace))
}

/// Linear residual model `r = A (theta - theta*)`, a quadratic objective
/// with its minimum at `theta*`; used to check optimiser convergence.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate {
    pub a: DMatrix<f64>,
    pub minimum: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl QuadraticSurrogate {
    pub fn new(a: DMatrix<f64>, minimum: Vec<f64>) -> Self {
        let bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); minimum.len()];
        QuadraticSurrogate { a, minimum, bounds }
    }
}

impl LeastSquares for QuadraticSurrogate {
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }

    fn residuals(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let d = DVector::from_iterator(theta.len(), theta.iter().zip(&self.minimum).map(|(t, m)| t - m));
        Ok(&self.a * d)
    }

    fn residuals_and_jacobian(&self, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.residuals(theta)?, self.a.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surrogate() -> QuadraticSurrogate {
        let a = DMatrix::from_row_slice(3, 2, &[2.0, 0.5, 0.0, 1.0, 1.0, -3.0]);
        QuadraticSurrogate::new(a, vec![0.7, -1.2])
    }

    #[test]
    fn lm_converges_on_quadratic() {
        let q = surrogate();
        let m = minimize(&q, &[3.0, 2.0], &OptimizerOptions::default()).unwrap();
        assert!(m.converged());
        assert!((m.theta[0] - 0.7).abs() < 1e-8 && (m.theta[1] + 1.2).abs() < 1e-8, "{:?}", m.theta);
    }

    #[test]
    fn bfgs_converges_on_quadratic() {
        let q = surrogate();
        let opts = OptimizerOptions { method: Optimizer::Bfgs, ..Default::default() };
        let m = minimize(&q, &[3.0, 2.0], &opts).unwrap();
        assert!(m.converged(), "{:?}", m.termination);
        assert!((m.theta[0] - 0.7).abs() < 1e-8 && (m.theta[1] + 1.2).abs() < 1e-8, "{:?}", m.theta);
    }

    #[test]
    fn descent_is_monotone() {
        let q = surrogate();
        for method in [Optimizer::LevenbergMarquardt, Optimizer::Bfgs] {
            let opts = OptimizerOptions { method, ..Default::default() };
            let m = minimize(&q, &[-5.0, 9.0], &opts).unwrap();
            for w in m.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective);
            }
        }
    }

    #[test]
    fn bounds_are_respected() {
        let mut q = surrogate();
        q.bounds = vec![(1.0, 2.0), (-5.0, 5.0)];
        let m = minimize(&q, &[1.5, 0.0], &OptimizerOptions::default()).unwrap();
        assert!(m.converged());
        assert!((m.theta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn start_at_minimum_stops_immediately() {
        let q = surrogate();
        let m = minimize(&q, &[0.7, -1.2], &OptimizerOptions::default()).unwrap();
        assert_eq!(m.iterations, 0);
        assert_eq!(m.theta, vec![0.7, -1.2]);
    }

    #[test]
    fn initial_outside_bounds_is_rejected() {
        let mut q = surrogate();
        q.bounds = vec![(0.0, 1.0); 2];
        assert!(minimize(&q, &[2.0, 0.5], &OptimizerOptions::default()).is_err());
    }
}
