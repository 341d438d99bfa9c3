//! Design for parameter precision: dynamic sensitivities, the Fisher
//! information of a candidate experiment combined with the current
//! parameter covariance, and A/D/E optimality.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{map_ordered, DesignFailure, DesignSpace};
use crate::error::{Result, TapError};
use crate::estimation::{fit, FitOptions, FitResult, Observation};
use crate::linalg::{condition_number, symmetric_eigenvalues, symmetrize};
use crate::mechanism::Mechanism;
use crate::params::ParameterSet;
use crate::reactor::{ExperimentDesign, Simulator};
use crate::synthetic::{add_noise, perturb_parameters, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    /// Forward sensitivities carried through the time integration.
    Tangent,
    /// Central differences of the outlet flux, step in eV.
    CentralDifference { step: f64 },
}

impl Default for SensitivityMethod {
    fn default() -> Self {
        SensitivityMethod::Tangent
    }
}

/// `Q_g[t, p] = d f_g(t) / d theta_p`, (nmol/s)/eV, one matrix per gas.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSensitivity {
    pub parameters: Vec<String>,
    pub gases: Vec<String>,
    pub time: Vec<f64>,
    pub q: Vec<DMatrix<f64>>,
}

impl DynamicSensitivity {
    pub fn gas(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.gases.iter().position(|g| g == name).map(|i| &self.q[i])
    }
}

/// Outlet-flux sensitivities to the free parameters of `theta`.
pub fn dynamic_sensitivity(
    sim: &Simulator,
    mech: &Mechanism,
    design: &ExperimentDesign,
    theta: &ParameterSet,
    method: SensitivityMethod,
) -> Result<DynamicSensitivity> {
    let parameters = theta.free_names();
    let m = parameters.len();
    match method {
        SensitivityMethod::Tangent => {
            let (flux, tangents) = sim.flux_with_tangents(mech, design, theta)?;
            let tau = flux.len();
            let q = (0..flux.gases.len())
                .map(|g| DMatrix::from_fn(tau, m, |t, p| tangents[p].flux[g][t]))
                .collect();
            Ok(DynamicSensitivity { parameters, gases: flux.gases, time: flux.time, q })
        }
        SensitivityMethod::CentralDifference { step } => {
            if !(step > 0.0) {
                return Err(TapError::invalid("sensitivity step must be positive"));
            }
            let base = theta.free_values();
            let probe = |p: usize, sign: f64| {
                let mut v = base.clone();
                v[p] += sign * step;
                sim.flux(mech, design, &theta.with_free_values(&v)).map_err(|e| {
                    let dir = if sign > 0.0 { "+" } else { "-" };
                    TapError::numerical(format!("sensitivity probe {}{dir}{step} eV failed: {e}", parameters[p]))
                })
            };
            let mut cols = Vec::with_capacity(m);
            for p in 0..m {
                cols.push((probe(p, 1.0)?, probe(p, -1.0)?));
            }
            let (gases, time) = match cols.first() {
                Some((up, _)) => (up.gases.clone(), up.time.clone()),
                None => {
                    let f = sim.flux(mech, design, theta)?;
                    (f.gases, f.time)
                }
            };
            let q = (0..gases.len())
                .map(|g| {
                    DMatrix::from_fn(time.len(), m, |t, p| (cols[p].0.flux[g][t] - cols[p].1.flux[g][t]) / (2.0 * step))
                })
                .collect();
            Ok(DynamicSensitivity { parameters, gases, time, q })
        }
    }
}

/// `sum_g sigma_g^-2 Q_g^T Q_g`; gases with zero sigma are unobserved.
pub fn information(sens: &DynamicSensitivity, sigma: &[f64]) -> Result<DMatrix<f64>> {
    if sigma.len() != sens.q.len() {
        return Err(TapError::invalid(format!("{} noise sigmas for {} gases", sigma.len(), sens.q.len())));
    }
    let m = sens.parameters.len();
    let mut info = DMatrix::zeros(m, m);
    for (q, &s) in sens.q.iter().zip(sigma) {
        if s > 0.0 && s.is_finite() {
            info += q.tr_mul(q) / (s * s);
        }
    }
    Ok(info)
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    match sym.clone().cholesky() {
        Some(ch) => Ok(symmetrize(&ch.inverse())),
        None => Err(TapError::numerical(format!(
            "{what} is singular or indefinite (condition number {:e})",
            condition_number(&sym)
        ))),
    }
}

/// Predicted posterior covariance `V = [sum_g sigma_g^-2 Q_g^T Q_g + prior^-1]^-1`.
pub fn fisher_information(sens: &DynamicSensitivity, sigma: &[f64], prior: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = sens.parameters.len();
    if prior.nrows() != m || prior.ncols() != m {
        return Err(TapError::invalid(format!("prior covariance must be {m}x{m}")));
    }
    let prior_info = spd_inverse(prior, "prior covariance")?;
    spd_inverse(&(information(sens, sigma)? + prior_info), "information matrix")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// Trace.
    A,
    /// Determinant.
    D,
    /// Largest eigenvalue.
    E,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::A, Criterion::D, Criterion::E];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Criterion::A),
            "D" => Ok(Criterion::D),
            "E" => Ok(Criterion::E),
            other => Err(TapError::invalid(format!("unknown criterion '{other}' (expected A, D or E)"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Scalar optimality criterion of a covariance-like matrix; lower is better.
pub fn criterion(v: &DMatrix<f64>, kind: Criterion) -> f64 {
    match kind {
        Criterion::A => v.trace(),
        Criterion::D => v.determinant(),
        Criterion::E => symmetric_eigenvalues(v).last().copied().unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub a: f64,
    pub d: f64,
    pub e: f64,
}

impl Criteria {
    pub fn of(v: &DMatrix<f64>) -> Self {
        Criteria { a: criterion(v, Criterion::A), d: criterion(v, Criterion::D), e: criterion(v, Criterion::E) }
    }

    pub fn get(&self, kind: Criterion) -> f64 {
        match kind {
            Criterion::A => self.a,
            Criterion::D => self.d,
            Criterion::E => self.e,
        }
    }
}

/// Rows/columns of `v` for the named parameters, in the given order.
pub fn restrict(v: &DMatrix<f64>, names: &[String], subset: &[String]) -> Result<DMatrix<f64>> {
    let idx = subset
        .iter()
        .map(|s| {
            names.iter().position(|n| n == s).ok_or_else(|| TapError::invalid(format!("'{s}' is not a free parameter")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(idx.len(), idx.len(), |i, j| v[(idx[i], idx[j])]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherEvaluation {
    /// Position in the design space's enumeration.
    pub index: usize,
    pub design: ExperimentDesign,
    pub parameters: Vec<String>,
    /// Predicted covariance `V` over all free parameters, row-major.
    pub information: Vec<Vec<f64>>,
    /// Criteria of `V` restricted to the subset, if any.
    pub criteria: Criteria,
    pub subset: Option<Vec<String>>,
}

impl FisherEvaluation {
    pub fn value(&self, kind: Criterion) -> f64 {
        self.criteria.get(kind)
    }

    pub fn information_matrix(&self) -> DMatrix<f64> {
        let n = self.information.len();
        DMatrix::from_fn(n, n, |i, j| self.information[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSearch {
    pub criterion: Criterion,
    /// Ascending by criterion; ties keep grid order.
    pub ranked: Vec<FisherEvaluation>,
    pub failures: Vec<DesignFailure>,
}

impl DesignSearch {
    pub fn best(&self) -> Option<&FisherEvaluation> {
        self.ranked.first()
    }

    /// The same evaluations ranked by another criterion and/or parameter
    /// subset, reusing the stored predicted covariances.
    pub fn rerank(&self, kind: Criterion, subset: Option<&[String]>) -> Result<DesignSearch> {
        let mut ranked = self
            .ranked
            .iter()
            .map(|e| {
                let v = e.information_matrix();
                let criteria = match subset {
                    Some(s) => Criteria::of(&restrict(&v, &e.parameters, s)?),
                    None => Criteria::of(&v),
                };
                Ok(FisherEvaluation { criteria, subset: subset.map(|s| s.to_vec()), ..e.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| a.value(kind).total_cmp(&b.value(kind)).then(a.index.cmp(&b.index)));
        Ok(DesignSearch { criterion: kind, ranked, failures: self.failures.clone() })
    }

    /// `rank,c3h8_nmol,o2_nmol,delay_s,temp_K,criterion_value`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,c3h8_nmol,o2_nmol,delay_s,temp_K,criterion_value\n");
        for (r, e) in self.ranked.iter().enumerate() {
            let d = &e.design;
            s += &format!(
                "{},{},{},{},{},{:e}\n",
                r + 1,
                d.intensity("C3H8"),
                d.intensity("O2"),
                d.delay("C3H8"),
                d.temperature,
                e.value(self.criterion)
            );
        }
        s
    }
}

/// Everything a precision design search needs besides the grid.
#[derive(Debug, Clone)]
pub struct PrecisionContext<'a> {
    pub sim: &'a Simulator,
    pub mech: &'a Mechanism,
    /// Current estimate; its free entries are the designed parameters.
    pub theta: &'a ParameterSet,
    /// Current parameter covariance, e.g. from the last fit.
    pub prior: &'a DMatrix<f64>,
    /// Absolute noise per gas, nmol/s.
    pub sigma: &'a [f64],
    pub method: SensitivityMethod,
}

impl PrecisionContext<'_> {
    pub fn evaluate(&self, index: usize, design: &ExperimentDesign, subset: Option<&[String]>) -> Result<FisherEvaluation> {
        let sens = dynamic_sensitivity(self.sim, self.mech, design, self.theta, self.method)?;
        let v = fisher_information(&sens, self.sigma, self.prior)?;
        let criteria = match subset {
            Some(s) => Criteria::of(&restrict(&v, &sens.parameters, s)?),
            None => Criteria::of(&v),
        };
        Ok(FisherEvaluation {
            index,
            design: design.clone(),
            information: (0..v.nrows()).map(|i| v.row(i).iter().copied().collect()).collect(),
            parameters: sens.parameters,
            criteria,
            subset: subset.map(|s| s.to_vec()),
        })
    }
}

/// Evaluates every design in `space` and ranks them by `kind` (ascending).
/// With `subset`, criteria use only those parameters' block of `V`.
pub fn design_search(
    ctx: &PrecisionContext,
    space: &DesignSpace,
    kind: Criterion,
    subset: Option<&[String]>,
) -> Result<DesignSearch> {
    let designs = space.designs()?;
    let names = ctx.theta.free_names();
    if let Some(s) = subset {
        if s.is_empty() {
            return Err(TapError::invalid("parameter subset is empty"));
        }
        restrict(&DMatrix::zeros(names.len(), names.len()), &names, s)?;
    }
    // Prior problems would fail every design identically; report them once.
    spd_inverse(ctx.prior, "prior covariance")?;
    if ctx.prior.nrows() != names.len() {
        return Err(TapError::invalid(format!("prior covariance must be {0}x{0}", names.len())));
    }
    let results = map_ordered(&designs, |i, d| ctx.evaluate(i, d, subset));
    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(e) => ranked.push(e),
            Err(e) => {
                log::warn!("design {} skipped: {e}", designs[i].label());
                failures.push(DesignFailure { index: i, design: designs[i].clone(), error: e.to_string() });
            }
        }
    }
    ranked.sort_by(|a, b| a.value(kind).total_cmp(&b.value(kind)));
    Ok(DesignSearch { criterion: kind, ranked, failures })
}

/// Synthetic-experiment settings for the predicted-vs-actual study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    /// Standard deviation of the per-experiment truth perturbation, eV.
    pub truth_perturbation: f64,
    /// Add measurement noise to the synthetic experiments.
    pub noisy: bool,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions { truth_perturbation: 0.0, noisy: true, seed: 0, fit: FitOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub index: usize,
    pub design: ExperimentDesign,
    pub predicted: Criteria,
    /// Criteria of the refit covariance; `None` when the refit failed.
    pub actual: Option<Criteria>,
    pub ci95: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionStudy {
    pub parameters: Vec<String>,
    pub subset: Option<Vec<String>>,
    pub rows: Vec<StudyRow>,
}

impl PrecisionStudy {
    /// Spearman correlation of predicted vs actual criterion over rows that refit.
    pub fn rank_correlation(&self, kind: Criterion) -> Option<f64> {
        let (p, a): (Vec<f64>, Vec<f64>) =
            self.rows.iter().filter_map(|r| r.actual.map(|a| (r.predicted.get(kind), a.get(kind)))).unzip();
        super::spearman(&p, &a)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,c3h8_nmol,o2_nmol,delay_s,temp_K");
        for k in Criterion::ALL {
            s += &format!(",predicted_{k},actual_{k}");
        }
        for n in &self.parameters {
            s += &format!(",ci95_{n}");
        }
        s.push('\n');
        for r in &self.rows {
            let d = &r.design;
            s += &format!("{},{},{},{},{}", r.index, d.intensity("C3H8"), d.intensity("O2"), d.delay("C3H8"), d.temperature);
            for k in Criterion::ALL {
                let actual = r.actual.map(|a| format!("{:e}", a.get(k))).unwrap_or_default();
                s += &format!(",{:e},{actual}", r.predicted.get(k));
            }
            for i in 0..self.parameters.len() {
                let ci = r.ci95.as_ref().map(|c| format!("{:e}", c[i])).unwrap_or_default();
                s += &format!(",{ci}");
            }
            s.push('\n');
        }
        s
    }
}

/// One synthetic experiment: simulate `truth` (perturbed per design),
/// optionally add noise, and package it as an observation.
pub fn synthetic_observation(
    sim: &Simulator,
    mech: &Mechanism,
    truth: &ParameterSet,
    design: &ExperimentDesign,
    sigma: &[f64],
    perturbation: f64,
    noisy: bool,
    seed: u64,
) -> Result<Observation> {
    let truth = perturb_parameters(truth, perturbation, seed)?;
    let clean = sim.flux(mech, design, &truth)?;
    let flux = if noisy { add_noise(&clean, &NoiseModel::absolute(sigma.to_vec(), seed))? } else { clean };
    Observation::new(design.clone(), flux, sigma.to_vec())
}

/// Per-design seed so that studies over a subset of the grid reproduce the
/// rows of the full study.
pub fn design_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1)
}

/// For each evaluated design: run the synthetic experiment against `truth`,
/// refit (previous observations plus the new one) from `ctx.theta`, and
/// compare the predicted criteria with those of the refit covariance.
pub fn predicted_vs_actual_study(
    ctx: &PrecisionContext,
    truth: &ParameterSet,
    previous: &[Observation],
    evaluations: &[FisherEvaluation],
    options: &StudyOptions,
) -> PrecisionStudy {
    let parameters = ctx.theta.free_names();
    let subset = evaluations.first().and_then(|e| e.subset.clone());
    let rows = map_ordered(evaluations, |_, ev| {
        let outcome = (|| -> Result<FitResult> {
            let seed = design_seed(options.seed, ev.index);
            let obs = synthetic_observation(
                ctx.sim,
                ctx.mech,
                truth,
                &ev.design,
                ctx.sigma,
                options.truth_perturbation,
                options.noisy,
                seed,
            )?;
            let mut all = previous.to_vec();
            all.push(obs);
            fit(ctx.sim, ctx.mech, &all, ctx.theta, &options.fit)
        })();
        match outcome {
            Ok(r) => {
                let cov = r.covariance_matrix();
                let actual = match &subset {
                    Some(s) => restrict(&cov, &parameters, s).map(|c| Criteria::of(&c)),
                    None => Ok(Criteria::of(&cov)),
                };
                match actual {
                    Ok(a) => StudyRow {
                        index: ev.index,
                        design: ev.design.clone(),
                        predicted: ev.criteria,
                        actual: Some(a),
                        ci95: Some(r.estimates.iter().map(|e| e.ci95).collect()),
                        error: None,
                    },
                    Err(e) => failed_row(ev, e),
                }
            }
            Err(e) => failed_row(ev, e),
        }
    });
    PrecisionStudy { parameters, subset, rows }
}

fn failed_row(ev: &FisherEvaluation, e: TapError) -> StudyRow {
    log::warn!("study refit failed for {}: {e}", ev.design.label());
    StudyRow {
        index: ev.index,
        design: ev.design.clone(),
        predicted: ev.criteria,
        actual: None,
        ci95: None,
        error: Some(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sens(q: Vec<DMatrix<f64>>, m: usize) -> DynamicSensitivity {
        let tau = q[0].nrows();
        DynamicSensitivity {
            parameters: (0..m).map(|i| format!("p{i}")).collect(),
            gases: (0..q.len()).map(|i| format!("g{i}")).collect(),
            time: (0..tau).map(|t| t as f64).collect(),
            q,
        }
    }

    #[test]
    fn scalar_fisher_hand_value() {
        let s = sens(vec![DMatrix::from_element(1, 1, 3.0)], 1);
        let v = fisher_information(&s, &[1.0], &DMatrix::identity(1, 1)).unwrap();
        assert!((v[(0, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_sensitivity_returns_prior() {
        let prior = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let s = sens(vec![DMatrix::zeros(5, 2)], 2);
        let v = fisher_information(&s, &[0.1], &prior).unwrap();
        assert!((v - &prior).amax() < 1e-12);
        // Worthless data (huge sigma) tends to the prior as well.
        let s = sens(vec![DMatrix::from_element(5, 2, 1.0)], 2);
        let v = fisher_information(&s, &[1e12], &prior).unwrap();
        assert!((v - &prior).amax() < 1e-12);
    }

    #[test]
    fn singular_prior_reports_condition() {
        let s = sens(vec![DMatrix::zeros(1, 2)], 2);
        let prior = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = fisher_information(&s, &[1.0], &prior).unwrap_err().to_string();
        assert!(err.contains("condition number"), "{err}");
    }

    #[test]
    fn criteria_of_diagonal_and_identity() {
        let v = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        assert_eq!(criterion(&v, Criterion::A), 13.0);
        assert!((criterion(&v, Criterion::D) - 36.0).abs() < 1e-12);
        assert!((criterion(&v, Criterion::E) - 9.0).abs() < 1e-12);
        let i = DMatrix::<f64>::identity(4, 4);
        assert_eq!(Criteria::of(&i).a, 4.0);
        assert!((Criteria::of(&i).d - 1.0).abs() < 1e-15);
        assert!((Criteria::of(&i).e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_sigma_gas_carries_no_information() {
        let s = sens(vec![DMatrix::from_element(3, 1, 1.0), DMatrix::from_element(3, 1, 5.0)], 1);
        let info = information(&s, &[1.0, 0.0]).unwrap();
        assert_eq!(info[(0, 0)], 3.0);
    }

    #[test]
    fn restriction_picks_block() {
        let v = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 5.0, 6.0, 3.0, 6.0, 9.0]);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = restrict(&v, &names, &["c".into(), "a".into()]).unwrap();
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[9.0, 3.0, 3.0, 1.0]));
        assert!(restrict(&v, &names, &["z".into()]).is_err());
    }

    #[test]
    fn criterion_parse() {
        assert_eq!(Criterion::parse("d").unwrap(), Criterion::D);
        assert!(Criterion::parse("X").is_err());
    }
}
