//! Design for mechanism discrimination: Hunter-Reiner divergence between
//! candidate mechanisms and BIC-based model selection.

use serde::{Deserialize, Serialize};

use super::precision::{design_seed, synthetic_observation};
use super::{map_ordered, spearman, DesignFailure, DesignSpace};
use crate::error::{Result, TapError};
use crate::estimation::{objective, optimize, Observation, OptimizerOptions};
use crate::mechanism::Mechanism;
use crate::params::ParameterSet;
use crate::reactor::{ExperimentDesign, FluxSeries, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub label: String,
    pub mechanism: Mechanism,
    /// Free entries are refit during discrimination and counted in BIC.
    pub params: ParameterSet,
}

impl CandidateModel {
    pub fn new(label: &str, mechanism: Mechanism, params: ParameterSet) -> Result<Self> {
        params.validate(&mechanism)?;
        Ok(CandidateModel { label: label.to_string(), mechanism, params })
    }

    pub fn simulate(&self, sim: &Simulator, design: &ExperimentDesign) -> Result<FluxSeries> {
        sim.flux(&self.mechanism, design, &self.params).map_err(|e| {
            log::debug!("model '{}' failed: {e}", self.label);
            TapError::in_design(design, e)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDivergence {
    pub first: String,
    pub second: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEvaluation {
    pub index: usize,
    pub design: ExperimentDesign,
    pub divergence: f64,
    pub pairs: Vec<PairDivergence>,
}

/// `sum_t sum_g (f_a - f_b)^2 / sigma_g^2` over `gases`, matched by name.
pub fn pair_divergence(a: &FluxSeries, b: &FluxSeries, gases: &[String], sigma: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TapError::invalid("models produced different time grids"));
    }
    let mut total = 0.0;
    for (g, &s) in gases.iter().zip(sigma) {
        if !(s > 0.0) {
            continue;
        }
        let fa = a.gas(g).ok_or_else(|| TapError::invalid(format!("gas {g} missing from a model")))?;
        let fb = b.gas(g).ok_or_else(|| TapError::invalid(format!("gas {g} missing from a model")))?;
        total += fa.iter().zip(fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (s * s);
    }
    Ok(total)
}

/// Hunter-Reiner divergence summed over all model pairs; `sigma` is in the
/// gas order of the first model. Gases with zero sigma are ignored.
pub fn hr_divergence(
    sim: &Simulator,
    models: &[CandidateModel],
    design: &ExperimentDesign,
    sigma: &[f64],
) -> Result<DivergenceEvaluation> {
    if models.len() < 2 {
        return Err(TapError::invalid("divergence needs at least two models"));
    }
    let gases = models[0].mechanism.gas_names();
    if sigma.len() != gases.len() {
        return Err(TapError::invalid(format!("{} noise sigmas for {} gases", sigma.len(), gases.len())));
    }
    let fluxes = models.iter().map(|m| m.simulate(sim, design)).collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            pairs.push(PairDivergence {
                first: models[i].label.clone(),
                second: models[j].label.clone(),
                value: pair_divergence(&fluxes[i], &fluxes[j], &gases, sigma)?,
            });
        }
    }
    Ok(DivergenceEvaluation {
        index: 0,
        design: design.clone(),
        divergence: pairs.iter().map(|p| p.value).sum(),
        pairs,
    })
}

/// Homoscedastic noise per gas (first model's gas order): `fraction` of the
/// largest peak any candidate produces at the reference `design`. Taking the
/// maximum keeps a model that consumes a gas completely from collapsing its
/// weight to near zero.
pub fn reference_sigma(
    sim: &Simulator,
    models: &[CandidateModel],
    design: &ExperimentDesign,
    fraction: f64,
) -> Result<Vec<f64>> {
    if !(fraction > 0.0) {
        return Err(TapError::invalid("noise fraction must be positive"));
    }
    let first = models.first().ok_or_else(|| TapError::invalid("no candidate models"))?;
    let gases = first.mechanism.gas_names();
    let mut peak = vec![0.0f64; gases.len()];
    for m in models {
        let flux = m.simulate(sim, design)?;
        for (g, name) in gases.iter().enumerate() {
            let series = flux.gas(name).ok_or_else(|| TapError::invalid(format!("gas {name} missing from {}", m.label)))?;
            peak[g] = series.iter().fold(peak[g], |a, &v| a.max(v));
        }
    }
    Ok(peak.into_iter().map(|p| fraction * p).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSearch {
    /// Descending by divergence; ties keep grid order.
    pub ranked: Vec<DivergenceEvaluation>,
    pub failures: Vec<DesignFailure>,
}

impl DivergenceSearch {
    pub fn best(&self) -> Option<&DivergenceEvaluation> {
        self.ranked.first()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,c3h8_nmol,o2_nmol,delay_s,temp_K,divergence");
        if let Some(first) = self.ranked.first() {
            for p in &first.pairs {
                s += &format!(",{}_vs_{}", p.first, p.second);
            }
        }
        s.push('\n');
        for (r, e) in self.ranked.iter().enumerate() {
            let d = &e.design;
            s += &format!(
                "{},{},{},{},{},{:e}",
                r + 1,
                d.intensity("C3H8"),
                d.intensity("O2"),
                d.delay("C3H8"),
                d.temperature,
                e.divergence
            );
            for p in &e.pairs {
                s += &format!(",{:e}", p.value);
            }
            s.push('\n');
        }
        s
    }
}

pub fn divergence_search(
    sim: &Simulator,
    models: &[CandidateModel],
    space: &DesignSpace,
    sigma: &[f64],
) -> Result<DivergenceSearch> {
    if models.len() < 2 {
        return Err(TapError::invalid("divergence needs at least two models"));
    }
    let designs = space.designs()?;
    let results = map_ordered(&designs, |i, d| {
        hr_divergence(sim, models, d, sigma).map(|mut e| {
            e.index = i;
            e
        })
    });
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
    ranked.sort_by(|a, b| b.divergence.total_cmp(&a.divergence));
    Ok(DivergenceSearch { ranked, failures })
}

/// Smallest objective used in BIC; a perfect fit is clamped to this.
pub const OBJECTIVE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicForm {
    /// `k ln n - 2 ln J`, with `J` the weighted least-squares objective.
    Printed,
    /// `n ln(J/n) + k ln n`, the Gaussian-likelihood BIC; increases with `J`.
    #[default]
    Gaussian,
}

/// `BIC = k ln(n) - 2 ln(J)`.
pub fn bic(k: usize, n: usize, objective: f64) -> Result<f64> {
    bic_with(BicForm::Printed, k, n, objective)
}

pub fn bic_with(form: BicForm, k: usize, n: usize, objective: f64) -> Result<f64> {
    if n == 0 {
        return Err(TapError::invalid("BIC needs at least one sample"));
    }
    if !(objective >= 0.0) || !objective.is_finite() {
        return Err(TapError::invalid(format!("BIC needs a non-negative finite objective, got {objective}")));
    }
    let j = if objective < OBJECTIVE_FLOOR {
        log::warn!("objective {objective:e} clamped to {OBJECTIVE_FLOOR:e} for BIC");
        OBJECTIVE_FLOOR
    } else {
        objective
    };
    let (k, n) = (k as f64, n as f64);
    Ok(match form {
        BicForm::Printed => k * n.ln() - 2.0 * j.ln(),
        BicForm::Gaussian => n * (j / n).ln() + k * n.ln(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrimination {
    pub label: String,
    pub objective: f64,
    pub k: usize,
    pub n: usize,
    pub bic: f64,
    pub refit: bool,
    /// Set when a requested refit failed; the row then uses the given parameters.
    pub refit_error: Option<String>,
}

/// Scores every model against `observation` (optionally after refitting its
/// free parameters), sorted by BIC ascending.
pub fn discriminate(
    sim: &Simulator,
    models: &[CandidateModel],
    observation: &Observation,
    refit: Option<&OptimizerOptions>,
    form: BicForm,
) -> Result<Vec<Discrimination>> {
    let n = observation.sample_count();
    let obs = std::slice::from_ref(observation);
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let k = m.params.free_count();
        let (objective, refit_error) = match refit {
            None => (objective(sim, &m.mechanism, obs, &m.params)?, None),
            Some(opts) => match optimize(sim, &m.mechanism, obs, &m.params, opts) {
                Ok((_, min)) => (min.objective, None),
                Err(e) => {
                    log::warn!("refit of {} failed: {e}", m.label);
                    (objective(sim, &m.mechanism, obs, &m.params)?, Some(e.to_string()))
                }
            },
        };
        rows.push(Discrimination {
            label: m.label.clone(),
            objective,
            k,
            n,
            bic: bic_with(form, k, n, objective)?,
            refit: refit.is_some(),
            refit_error,
        });
    }
    rows.sort_by(|a, b| a.bic.total_cmp(&b.bic));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminationOptions {
    /// Per-experiment perturbation of the truth's free energies, eV.
    pub truth_perturbation: f64,
    pub noisy: bool,
    pub seed: u64,
    /// Refit each model before scoring.
    pub refit: bool,
    pub optimizer: OptimizerOptions,
    pub bic_form: BicForm,
}

impl Default for DiscriminationOptions {
    fn default() -> Self {
        DiscriminationOptions {
            truth_perturbation: 0.05,
            noisy: true,
            seed: 0,
            refit: false,
            optimizer: OptimizerOptions::default(),
            bic_form: BicForm::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceStudyRow {
    pub index: usize,
    pub design: ExperimentDesign,
    pub divergence: f64,
    /// In model order; empty when the design failed.
    pub scores: Vec<Discrimination>,
    pub error: Option<String>,
}

impl DivergenceStudyRow {
    pub fn bic(&self, label: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.label == label).map(|s| s.bic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceStudy {
    pub truth: String,
    pub labels: Vec<String>,
    pub rows: Vec<DivergenceStudyRow>,
}

impl DivergenceStudy {
    /// Spearman correlation between divergence and `BIC(a) - BIC(b)`.
    pub fn delta_bic_correlation(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter_map(|r| Some((r.divergence, r.bic(a)? - r.bic(b)?)))
            .unzip();
        spearman(&x, &y)
    }

    /// `c3h8_nmol,o2_nmol,delay_s,temp_K,divergence,bic_<label>...`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("c3h8_nmol,o2_nmol,delay_s,temp_K,divergence");
        for l in &self.labels {
            s += &format!(",bic_{l}");
        }
        s.push('\n');
        for r in &self.rows {
            let d = &r.design;
            s += &format!(
                "{},{},{},{},{:e}",
                d.intensity("C3H8"),
                d.intensity("O2"),
                d.delay("C3H8"),
                d.temperature,
                r.divergence
            );
            for l in &self.labels {
                s += &format!(",{}", r.bic(l).map(|v| format!("{v:e}")).unwrap_or_default());
            }
            s.push('\n');
        }
        s
    }
}

/// Synthetic experiment from the model labelled `truth` at `design`
/// (perturbed and noisy per `options`), seeded by the design's grid index.
pub fn truth_observation(
    sim: &Simulator,
    models: &[CandidateModel],
    truth: &str,
    index: usize,
    design: &ExperimentDesign,
    sigma: &[f64],
    options: &DiscriminationOptions,
) -> Result<Observation> {
    let t = models
        .iter()
        .find(|m| m.label == truth)
        .ok_or_else(|| TapError::invalid(format!("no candidate model labelled '{truth}'")))?;
    synthetic_observation(
        sim,
        &t.mechanism,
        &t.params,
        design,
        sigma,
        options.truth_perturbation,
        options.noisy,
        design_seed(options.seed, index),
    )
}

/// For each evaluated design: synthesise data from the `truth` model and
/// score every candidate (without or with refitting).
pub fn divergence_study(
    sim: &Simulator,
    models: &[CandidateModel],
    truth: &str,
    evaluations: &[DivergenceEvaluation],
    sigma: &[f64],
    options: &DiscriminationOptions,
) -> Result<DivergenceStudy> {
    if !models.iter().any(|m| m.label == truth) {
        return Err(TapError::invalid(format!("no candidate model labelled '{truth}'")));
    }
    let refit = options.refit.then_some(&options.optimizer);
    let rows = map_ordered(evaluations, |_, ev| {
        let outcome = truth_observation(sim, models, truth, ev.index, &ev.design, sigma, options)
            .and_then(|obs| discriminate(sim, models, &obs, refit, options.bic_form));
        let (scores, error) = match outcome {
            Ok(mut s) => {
                // Model order makes the CSV columns stable.
                s.sort_by_key(|d| models.iter().position(|m| m.label == d.label));
                (s, None)
            }
            Err(e) => {
                log::warn!("study failed for {}: {e}", ev.design.label());
                (Vec::new(), Some(e.to_string()))
            }
        };
        DivergenceStudyRow { index: ev.index, design: ev.design.clone(), divergence: ev.divergence, scores, error }
    });
    Ok(DivergenceStudy {
        truth: truth.to_string(),
        labels: models.iter().map(|m| m.label.clone()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_bic_hand_values() {
        assert!((bic(3, 100, 1.0).unwrap() - 3.0 * 100f64.ln()).abs() < 1e-12);
        assert!((bic(0, 10, std::f64::consts::E).unwrap() + 2.0).abs() < 1e-12);
        assert!(bic(1, 10, -1.0).is_err());
        assert!(bic(1, 0, 1.0).is_err());
    }

    #[test]
    fn gaussian_bic_hand_value() {
        let v = bic_with(BicForm::Gaussian, 2, 10, 5.0).unwrap();
        assert!((v - (10.0 * 0.5f64.ln() + 2.0 * 10f64.ln())).abs() < 1e-12);
        // Perfect fit is floored rather than -inf.
        assert!(bic_with(BicForm::Gaussian, 2, 10, 0.0).unwrap().is_finite());
    }

    #[test]
    fn pair_divergence_constant_offset() {
        let time: Vec<f64> = (1..=50).map(|k| k as f64).collect();
        let gases = vec!["A".to_string(), "B".to_string()];
        let a = FluxSeries::zeros(time.clone(), gases.clone());
        let mut b = a.clone();
        b.flux[1].iter_mut().for_each(|v| *v = 0.3);
        let d = pair_divergence(&a, &b, &gases, &[1.0, 1.0]).unwrap();
        assert!((d - 50.0 * 0.09).abs() < 1e-12);
        assert_eq!(pair_divergence(&a, &a, &gases, &[1.0, 1.0]).unwrap(), 0.0);
    }
}
