//! The subcommands. Each writes its artifacts through [`Output`] and
//! returns a one-paragraph summary for stdout.

use nalgebra::DMatrix;
use serde::Serialize;
use tap_core::doe::divergence::{
    discriminate, divergence_search, divergence_study, reference_sigma, truth_observation, CandidateModel,
    Discrimination, DivergenceEvaluation, DivergenceSearch, DivergenceStudy,
};
use tap_core::doe::precision::{
    design_search, predicted_vs_actual_study, restrict, synthetic_observation, Criteria, Criterion, DesignSearch,
    FisherEvaluation, PrecisionContext,
};
use tap_core::doe::spread_indices;
use tap_core::estimation::{fit, FitResult, Observation, ParameterEstimate, Termination};
use tap_core::synthetic::{add_noise, NoiseModel};
use tap_core::{ExperimentDesign, FluxSeries, Mechanism, ParameterSet, Simulator};

use crate::config::{Config, StudyKind};
use crate::error::{CliError, CliResult};
use crate::output::Output;
use crate::svg;

/// Command-line overrides of the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub criterion: Option<Criterion>,
    pub subset: Option<Vec<String>>,
    pub refit: bool,
}

pub struct Run<'a> {
    pub config: &'a Config,
    pub out: &'a mut Output,
    pub overrides: &'a Overrides,
}

impl Run<'_> {
    fn criterion(&self) -> CliResult<Criterion> {
        match self.overrides.criterion {
            Some(c) => Ok(c),
            None => self.config.criterion(),
        }
    }

    fn subset(&self) -> Option<Vec<String>> {
        let s = self.overrides.subset.clone().unwrap_or_else(|| self.config.doe_precision.subset.clone());
        (!s.is_empty()).then_some(s)
    }

    fn refit(&self) -> bool {
        self.overrides.refit || self.config.doe_divergence.refit
    }
}

#[derive(Debug, Clone, Serialize)]
struct DesignRecord {
    c3h8_nmol: f64,
    o2_nmol: f64,
    delay_s: f64,
    temperature_k: f64,
}

impl From<&ExperimentDesign> for DesignRecord {
    fn from(d: &ExperimentDesign) -> Self {
        DesignRecord {
            c3h8_nmol: d.intensity("C3H8"),
            o2_nmol: d.intensity("O2"),
            delay_s: d.delay("C3H8"),
            temperature_k: d.temperature,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ExperimentRecord {
    design: DesignRecord,
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
struct FitSummary {
    objective: f64,
    iterations: usize,
    termination: Termination,
    sample_count: usize,
    estimates: Vec<ParameterEstimate>,
    /// Criteria of the covariance (restricted to the subset, if any).
    criteria: Criteria,
    warnings: Vec<String>,
}

fn summarize(r: &FitResult, subset: Option<&[String]>) -> CliResult<FitSummary> {
    Ok(FitSummary {
        objective: r.objective,
        iterations: r.iterations,
        termination: r.termination,
        sample_count: r.sample_count,
        estimates: r.estimates.clone(),
        criteria: covariance_criteria(r, subset)?,
        warnings: r.warnings.clone(),
    })
}

fn covariance_criteria(r: &FitResult, subset: Option<&[String]>) -> CliResult<Criteria> {
    let cov = r.covariance_matrix();
    Ok(match subset {
        Some(s) => Criteria::of(&restrict(&cov, &r.free_names(), s)?),
        None => Criteria::of(&cov),
    })
}

fn estimates_csv(r: &FitResult, truth: &ParameterSet) -> String {
    let mut s = String::from("name,truth,estimate,std_error,ci95\n");
    for e in &r.estimates {
        let t = truth.get(&e.name).map(|v| v.to_string()).unwrap_or_default();
        s += &format!("{},{t},{:e},{:e},{:e}\n", e.name, e.value, e.std_error, e.ci95);
    }
    s
}

/// Truth, noise and the synthetic initial experiment of the precision workflow.
struct PrecisionSetup {
    sim: Simulator,
    mech: Mechanism,
    truth: ParameterSet,
    sigma: Vec<f64>,
    initial: Observation,
    initial_seed: u64,
}

impl PrecisionSetup {
    fn new(config: &Config) -> CliResult<Self> {
        let sim = config.simulator()?;
        let (mech, truth) = config.truth()?;
        let design = config.experiment.design();
        let clean = sim.flux(&mech, &design, &truth)?;
        let sigma = config.synthetic.noise(config.seed).resolve(&clean)?;
        let initial = synthetic_observation(
            &sim,
            &mech,
            &truth,
            &design,
            &sigma,
            config.synthetic.truth_perturbation,
            config.synthetic.noisy,
            config.seed,
        )?;
        Ok(PrecisionSetup { sim, mech, truth, sigma, initial, initial_seed: config.seed })
    }

    fn observe(&self, config: &Config, design: &ExperimentDesign, seed: u64) -> CliResult<Observation> {
        Ok(synthetic_observation(
            &self.sim,
            &self.mech,
            &self.truth,
            design,
            &self.sigma,
            config.synthetic.truth_perturbation,
            config.synthetic.noisy,
            seed,
        )?)
    }

    fn fit(&self, config: &Config, observations: &[Observation], start: &ParameterSet) -> CliResult<FitResult> {
        Ok(fit(&self.sim, &self.mech, observations, start, &config.estimation.fit_options())?)
    }

    fn ctx<'a>(&'a self, config: &Config, current: &'a FitResult, prior: &'a DMatrix<f64>) -> PrecisionContext<'a> {
        PrecisionContext {
            sim: &self.sim,
            mech: &self.mech,
            theta: &current.theta_hat,
            prior,
            sigma: &self.sigma,
            method: config.doe_precision.method(),
        }
    }
}

fn fmt_design(d: &ExperimentDesign) -> String {
    format!(
        "C3H8 {} nmol, O2 {} nmol, propane delay {} s, {} K",
        d.intensity("C3H8"),
        d.intensity("O2"),
        d.delay("C3H8"),
        d.temperature
    )
}

// ---------------------------------------------------------------- simulate

pub fn simulate(run: Run) -> CliResult<String> {
    let config = run.config;
    let sim = config.simulator()?;
    let (mech, truth) = config.truth()?;
    let design = config.experiment.design();
    let flux = sim.flux(&mech, &design, &truth)?;
    run.out.write("flux.csv", &flux.to_csv())?;
    run.out.write("flux.svg", &svg::flux_panels(&flux, None, &format!("{}: {}", mech.name, fmt_design(&design))))?;

    #[derive(Serialize)]
    struct Report<'a> {
        mechanism: &'a str,
        design: DesignRecord,
        noise: Option<NoiseRecord>,
    }
    #[derive(Serialize)]
    struct NoiseRecord {
        seed: u64,
        sigma: Vec<f64>,
    }
    let noise = if config.synthetic.noisy {
        let sigma = config.synthetic.noise(config.seed).resolve(&flux)?;
        let noisy = add_noise(&flux, &NoiseModel::absolute(sigma.clone(), config.seed))?;
        run.out.write("flux_noisy.csv", &noisy.to_csv())?;
        Some(NoiseRecord { seed: config.seed, sigma })
    } else {
        None
    };
    run.out.write_json("report.json", &Report { mechanism: &mech.name, design: (&design).into(), noise })?;
    let integrals: Vec<String> =
        flux.gases.iter().enumerate().map(|(g, n)| format!("{n} {:.4}", flux.integral(g))).collect();
    Ok(format!(
        "simulated {} gases x {} samples; outlet integrals (nmol): {}",
        flux.gases.len(),
        flux.len(),
        integrals.join(", ")
    ))
}

// ---------------------------------------------------------------- fit

pub fn fit_cmd(run: Run) -> CliResult<String> {
    let config = run.config;
    let setup = PrecisionSetup::new(config)?;
    let observation = match &config.estimation.data {
        Some(path) => {
            let path = config.resolve(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read data file {}: {e}", path.display())))?;
            let flux = FluxSeries::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let sigma = config.synthetic.noise(config.seed).resolve(&flux)?;
            Observation::new(config.experiment.design(), flux, sigma)?
        }
        None => {
            run.out.write("observation.csv", &setup.initial.flux.to_csv())?;
            setup.initial.clone()
        }
    };
    let start = config.initial_guess(&setup.truth);
    let result = setup.fit(config, std::slice::from_ref(&observation), &start)?;
    let fitted = setup.sim.flux(&setup.mech, &observation.design, &result.theta_hat)?;
    run.out.write("fitted.csv", &fitted.to_csv())?;
    run.out.write("fit.svg", &svg::flux_panels(&observation.flux, Some(&fitted), "observed (blue) and fitted (red)"))?;
    run.out.write("estimates.csv", &estimates_csv(&result, &setup.truth))?;
    run.out.write_json("fit.json", &result)?;
    let table: Vec<String> =
        result.estimates.iter().map(|e| format!("{} {:.4} ± {:.2e}", e.name, e.value, e.ci95)).collect();
    Ok(format!(
        "fit: J = {:.6e} after {} iterations ({:?}); {}",
        result.objective,
        result.iterations,
        result.termination,
        table.join(", ")
    ))
}

// ---------------------------------------------------------------- doe-precision

#[derive(Serialize)]
struct PrecisionReport<'a> {
    criterion: Criterion,
    subset: Option<Vec<String>>,
    experiments: Vec<ExperimentRecord>,
    fit: FitSummary,
    best: Option<RankedDesign>,
    evaluated: usize,
    failures: &'a [tap_core::doe::DesignFailure],
}

#[derive(Serialize)]
struct RankedDesign {
    design: DesignRecord,
    value: f64,
}

fn best_of(search: &DesignSearch) -> Option<RankedDesign> {
    search.best().map(|b| RankedDesign { design: (&b.design).into(), value: b.value(search.criterion) })
}

pub fn doe_precision(run: Run) -> CliResult<String> {
    let config = run.config;
    let kind = run.criterion()?;
    let subset = run.subset();
    let setup = PrecisionSetup::new(config)?;
    let first = setup.fit(config, std::slice::from_ref(&setup.initial), &config.initial_guess(&setup.truth))?;
    let prior = first.covariance_matrix();
    let search = design_search(&setup.ctx(config, &first, &prior), &config.doe_precision.space, kind, subset.as_deref())?;
    run.out.write("designs.csv", &search.to_csv())?;
    let report = PrecisionReport {
        criterion: kind,
        subset: subset.clone(),
        experiments: vec![ExperimentRecord { design: (&setup.initial.design).into(), seed: setup.initial_seed }],
        fit: summarize(&first, subset.as_deref())?,
        best: best_of(&search),
        evaluated: search.ranked.len(),
        failures: &search.failures,
    };
    run.out.write_json("report.json", &report)?;
    let best = search.best().ok_or_else(|| CliError::Numerical("no design could be evaluated".into()))?;
    Ok(format!(
        "{kind}-optimal design: {} ({kind} = {:.3e}, current {:.3e}); {} designs ranked, {} failed",
        fmt_design(&best.design),
        best.value(kind),
        report.fit.criteria.get(kind),
        search.ranked.len(),
        search.failures.len()
    ))
}

// ---------------------------------------------------------------- workflow-precision

#[derive(Serialize)]
struct Iteration {
    iteration: usize,
    fit: FitSummary,
    /// Best design proposed from this fit, with its predicted criterion.
    proposed: Option<RankedDesign>,
    /// Current criterion over the best predicted one.
    predicted_improvement: Option<f64>,
}

#[derive(Serialize)]
struct WorkflowReport {
    criterion: Criterion,
    subset: Option<Vec<String>>,
    experiments: Vec<ExperimentRecord>,
    iterations: Vec<Iteration>,
    stop_reason: Option<String>,
}

pub fn workflow_precision(run: Run) -> CliResult<String> {
    let config = run.config;
    let kind = run.criterion()?;
    let subset = run.subset();
    let setup = PrecisionSetup::new(config)?;
    let mut report = WorkflowReport {
        criterion: kind,
        subset: subset.clone(),
        experiments: vec![ExperimentRecord { design: (&setup.initial.design).into(), seed: setup.initial_seed }],
        iterations: Vec::new(),
        stop_reason: None,
    };
    let result = precision_loop(&run, &setup, kind, subset.as_deref(), &mut report);
    if let Err(e) = &result {
        report.stop_reason = Some(format!("error: {e}"));
    }
    run.out.write_json("report.json", &report)?;
    result?;
    let chosen: Vec<String> =
        report.experiments.iter().skip(1).map(|e| format!("({}, {}, {} s, {} K)", e.design.c3h8_nmol, e.design.o2_nmol, e.design.delay_s, e.design.temperature_k)).collect();
    let last = report.iterations.last().map(|i| i.fit.criteria.get(kind)).unwrap_or(f64::NAN);
    Ok(format!(
        "{} designed experiment(s) {}; final {kind} = {last:.3e}; stopped: {}",
        chosen.len(),
        chosen.join(" "),
        report.stop_reason.as_deref().unwrap_or("")
    ))
}

fn precision_loop(
    run: &Run,
    setup: &PrecisionSetup,
    kind: Criterion,
    subset: Option<&[String]>,
    report: &mut WorkflowReport,
) -> CliResult<()> {
    let config = run.config;
    let mut observations = vec![setup.initial.clone()];
    let mut current = setup.fit(config, &observations, &config.initial_guess(&setup.truth))?;
    for iteration in 0.. {
        report.iterations.push(Iteration {
            iteration,
            fit: summarize(&current, subset)?,
            proposed: None,
            predicted_improvement: None,
        });
        if iteration == config.workflow.max_iterations {
            report.stop_reason = Some(format!("reached max_iterations = {iteration}"));
            return Ok(());
        }
        let prior = current.covariance_matrix();
        let search = design_search(&setup.ctx(config, &current, &prior), &config.doe_precision.space, kind, subset)?;
        let best = search.best().ok_or_else(|| CliError::Numerical("no design could be evaluated".into()))?;
        let achieved = covariance_criteria(&current, subset)?.get(kind);
        let improvement = achieved / best.value(kind);
        let entry = report.iterations.last_mut().expect("pushed above");
        entry.proposed = best_of(&search);
        entry.predicted_improvement = Some(improvement);
        if !(improvement >= config.workflow.min_improvement) {
            report.stop_reason = Some(format!(
                "predicted {kind} improvement {improvement:.3} below {}",
                config.workflow.min_improvement
            ));
            return Ok(());
        }
        let seed = config.seed.wrapping_add(iteration as u64 + 1);
        observations.push(setup.observe(config, &best.design, seed)?);
        report.experiments.push(ExperimentRecord { design: (&best.design).into(), seed });
        current = setup.fit(config, &observations, &current.theta_hat)?;
        log::info!("iteration {} done: {kind} = {:.3e}", iteration + 1, covariance_criteria(&current, subset)?.get(kind));
    }
    unreachable!()
}

// ---------------------------------------------------------------- divergence

struct DivergenceSetup {
    sim: Simulator,
    models: Vec<CandidateModel>,
    sigma: Vec<f64>,
    search: DivergenceSearch,
}

impl DivergenceSetup {
    fn new(config: &Config) -> CliResult<Self> {
        let sim = config.simulator()?;
        let models = config.candidate_models()?;
        let sigma =
            reference_sigma(&sim, &models, &config.experiment.design(), config.doe_divergence.noise_fraction)?;
        let search = divergence_search(&sim, &models, &config.doe_divergence.space, &sigma)?;
        Ok(DivergenceSetup { sim, models, sigma, search })
    }

    fn best(&self) -> CliResult<&DivergenceEvaluation> {
        self.search.best().ok_or_else(|| CliError::Numerical("no design could be evaluated".into()))
    }
}

const NO_DISCRIMINATING_DESIGN: &str = "no discriminating design exists: every design has zero divergence";

#[derive(Serialize)]
struct DivergenceReport<'a> {
    labels: Vec<String>,
    sigma: &'a [f64],
    best: Option<&'a DivergenceEvaluation>,
    evaluated: usize,
    failures: &'a [tap_core::doe::DesignFailure],
    warnings: Vec<String>,
}

pub fn doe_divergence(run: Run) -> CliResult<String> {
    let setup = DivergenceSetup::new(run.config)?;
    run.out.write("divergence.csv", &setup.search.to_csv())?;
    let best = setup.best()?;
    let mut warnings = Vec::new();
    if !(best.divergence > 0.0) {
        warnings.push(NO_DISCRIMINATING_DESIGN.to_string());
    }
    run.out.write_json(
        "report.json",
        &DivergenceReport {
            labels: setup.models.iter().map(|m| m.label.clone()).collect(),
            sigma: &setup.sigma,
            best: Some(best),
            evaluated: setup.search.ranked.len(),
            failures: &setup.search.failures,
            warnings: warnings.clone(),
        },
    )?;
    if !warnings.is_empty() {
        return Ok(warnings.join("; "));
    }
    Ok(format!("max-divergence design: {} (divergence {:.4e})", fmt_design(&best.design), best.divergence))
}

#[derive(Serialize)]
struct DiscriminationReport<'a> {
    truth: &'a str,
    refit: bool,
    sigma: &'a [f64],
    experiment: Option<ExperimentRecord>,
    divergence: Option<&'a DivergenceEvaluation>,
    /// Ascending BIC.
    scores: Vec<Discrimination>,
    selected: Option<String>,
    warnings: Vec<String>,
}

fn bic_csv(scores: &[Discrimination]) -> String {
    let mut s = String::from("label,k,n,objective,bic\n");
    for d in scores {
        s += &format!("{},{},{},{:e},{:e}\n", d.label, d.k, d.n, d.objective, d.bic);
    }
    s
}

pub fn workflow_divergence(run: Run) -> CliResult<String> {
    let config = run.config;
    let refit = run.refit();
    let setup = DivergenceSetup::new(config)?;
    run.out.write("divergence.csv", &setup.search.to_csv())?;
    let best = setup.best()?;
    let truth = config.doe_divergence.truth.as_str();
    let mut report = DiscriminationReport {
        truth,
        refit,
        sigma: &setup.sigma,
        experiment: None,
        divergence: Some(best),
        scores: Vec::new(),
        selected: None,
        warnings: Vec::new(),
    };
    if !(best.divergence > 0.0) {
        report.warnings.push(NO_DISCRIMINATING_DESIGN.to_string());
        run.out.write_json("report.json", &report)?;
        return Ok(NO_DISCRIMINATING_DESIGN.to_string());
    }
    let options = config.discrimination(refit);
    let observation = truth_observation(&setup.sim, &setup.models, truth, best.index, &best.design, &setup.sigma, &options)?;
    report.experiment = Some(ExperimentRecord {
        design: (&best.design).into(),
        seed: tap_core::doe::precision::design_seed(options.seed, best.index),
    });
    let refit_options = refit.then_some(&options.optimizer);
    let scores = discriminate(&setup.sim, &setup.models, &observation, refit_options, options.bic_form);
    let scores = match scores {
        Ok(s) => s,
        Err(e) => {
            report.warnings.push(format!("error: {e}"));
            run.out.write_json("report.json", &report)?;
            return Err(e.into());
        }
    };
    run.out.write("bic.csv", &bic_csv(&scores))?;
    report.selected = scores.first().map(|s| s.label.clone());
    if let [a, b, ..] = scores.as_slice() {
        let gap = b.bic - a.bic;
        if gap < config.doe_divergence.bic_threshold {
            report.warnings.push(format!(
                "discrimination lost: BIC gap between {} and {} is {gap:.3}, below {}{}",
                a.label,
                b.label,
                config.doe_divergence.bic_threshold,
                if refit { " (parameters were refit to the data)" } else { "" }
            ));
        }
    }
    for s in scores.iter().filter_map(|s| s.refit_error.as_ref().map(|e| (s, e))) {
        report.warnings.push(format!("refit of {} failed: {}", s.0.label, s.1));
    }
    report.scores = scores;
    run.out.write_json("report.json", &report)?;
    let table: Vec<String> = report.scores.iter().map(|s| format!("{} {:.6e}", s.label, s.bic)).collect();
    let mut summary = format!(
        "design {} (divergence {:.4e}); BIC{}: {}; lowest: {}",
        fmt_design(&best.design),
        best.divergence,
        if refit { " after refit" } else { "" },
        table.join(", "),
        report.selected.as_deref().unwrap_or("-")
    );
    for w in &report.warnings {
        summary += &format!("\nwarning: {w}");
    }
    Ok(summary)
}

// ---------------------------------------------------------------- study

fn picks<T: Clone>(ranked: &[T], count: usize) -> Vec<T> {
    let count = if count == 0 { ranked.len() } else { count };
    spread_indices(ranked.len(), count).into_iter().map(|i| ranked[i].clone()).collect()
}

pub fn study(run: Run) -> CliResult<String> {
    match run.config.study.kind {
        StudyKind::PredictedVsActual => study_precision(run),
        StudyKind::DivergenceBic => study_divergence(run),
    }
}

fn study_precision(run: Run) -> CliResult<String> {
    let config = run.config;
    let kind = run.criterion()?;
    let subset = run.subset();
    // Fail on a bad grid before the expensive first fit.
    config.doe_precision.space.designs()?;
    let setup = PrecisionSetup::new(config)?;
    let first = setup.fit(config, std::slice::from_ref(&setup.initial), &config.initial_guess(&setup.truth))?;
    let prior = first.covariance_matrix();
    let ctx = setup.ctx(config, &first, &prior);
    let search = design_search(&ctx, &config.doe_precision.space, kind, subset.as_deref())?;
    run.out.write("designs.csv", &search.to_csv())?;
    let chosen: Vec<FisherEvaluation> = picks(&search.ranked, config.study.designs);
    let study = predicted_vs_actual_study(&ctx, &setup.truth, std::slice::from_ref(&setup.initial), &chosen, &config.study_options());
    run.out.write("study_predicted_vs_actual.csv", &study.to_csv())?;
    let mut correlations = Vec::new();
    for k in Criterion::ALL {
        let points: Vec<(f64, f64)> =
            study.rows.iter().filter_map(|r| Some((r.predicted.get(k), r.actual?.get(k)))).collect();
        run.out.write(
            &format!("study_{k}.svg"),
            &svg::scatter(&points, true, true, &format!("{k}-criterion: predicted vs actual"), "predicted", "actual"),
        )?;
        correlations.push((k, study.rank_correlation(k)));
    }

    #[derive(Serialize)]
    struct Report {
        criterion: Criterion,
        subset: Option<Vec<String>>,
        first_fit: FitSummary,
        designs: usize,
        failed_refits: usize,
        rank_correlation: Vec<(Criterion, Option<f64>)>,
    }
    let failed = study.rows.iter().filter(|r| r.actual.is_none()).count();
    run.out.write_json(
        "report.json",
        &Report {
            criterion: kind,
            subset,
            first_fit: summarize(&first, None)?,
            designs: study.rows.len(),
            failed_refits: failed,
            rank_correlation: correlations.clone(),
        },
    )?;
    let rho: Vec<String> = correlations
        .iter()
        .map(|(k, r)| format!("{k} {}", r.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())))
        .collect();
    Ok(format!(
        "predicted-vs-actual over {} designs ({failed} refits failed); Spearman rank correlation: {}",
        study.rows.len(),
        rho.join(", ")
    ))
}

fn delta_bic_points(study: &DivergenceStudy, a: &str, b: &str) -> Vec<(f64, f64)> {
    study.rows.iter().filter_map(|r| Some((r.divergence, r.bic(a)? - r.bic(b)?))).collect()
}

fn study_divergence(run: Run) -> CliResult<String> {
    let config = run.config;
    let setup = DivergenceSetup::new(config)?;
    run.out.write("divergence.csv", &setup.search.to_csv())?;
    let chosen = picks(&setup.search.ranked, config.study.designs);
    let truth = config.doe_divergence.truth.as_str();
    let rival = setup
        .models
        .iter()
        .map(|m| m.label.as_str())
        .find(|l| *l != truth)
        .expect("at least two models");
    let mut lines = Vec::new();
    let mut correlations = Vec::new();
    for refit in [false, true] {
        let tag = if refit { "refit" } else { "norefit" };
        let study = divergence_study(&setup.sim, &setup.models, truth, &chosen, &setup.sigma, &config.discrimination(refit))?;
        run.out.write(&format!("divergence_bic_{tag}.csv"), &study.to_csv())?;
        run.out.write(
            &format!("divergence_bic_{tag}.svg"),
            &svg::scatter(
                &delta_bic_points(&study, rival, truth),
                true,
                false,
                &format!("divergence vs BIC({rival}) - BIC({truth}), {tag}"),
                "divergence",
                "BIC difference",
            ),
        )?;
        let rho = study.delta_bic_correlation(rival, truth);
        correlations.push((tag, rho));
        let failed = study.rows.iter().filter(|r| r.error.is_some()).count();
        lines.push(format!(
            "{tag}: Spearman(divergence, BIC({rival}) - BIC({truth})) = {} over {} designs ({failed} failed)",
            rho.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into()),
            study.rows.len()
        ));
    }

    #[derive(Serialize)]
    struct Report<'a> {
        truth: &'a str,
        rival: &'a str,
        sigma: &'a [f64],
        designs: usize,
        rank_correlation: Vec<(&'a str, Option<f64>)>,
    }
    run.out.write_json(
        "report.json",
        &Report { truth, rival, sigma: &setup.sigma, designs: chosen.len(), rank_correlation: correlations },
    )?;
    Ok(lines.join("\n"))
}
