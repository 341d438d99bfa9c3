//! Run configuration: one TOML file whose tables mirror the toolkit's
//! modules. Every key has a default, so an empty file runs the bundled
//! propane case study.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tap_core::doe::divergence::{BicForm, CandidateModel, DiscriminationOptions};
use tap_core::doe::precision::{Criterion, SensitivityMethod, StudyOptions};
use tap_core::doe::DesignSpace;
use tap_core::estimation::{FitOptions, HessianMode, OptimizerOptions};
use tap_core::fixtures::{self, INITIAL_ACTIVATION, INITIAL_DELTA_G, PRECISION_PARAMETERS};
use tap_core::reactor::SolverOptions;
use tap_core::synthetic::NoiseModel;
use tap_core::{parse_mechanism, ExperimentDesign, Mechanism, ParameterSet, ReactorGeometry, Simulator};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub mechanism: MechanismConfig,
    pub reactor: ReactorConfig,
    pub experiment: ExperimentConfig,
    pub synthetic: SyntheticConfig,
    pub estimation: EstimationConfig,
    pub doe_precision: PrecisionConfig,
    pub doe_divergence: DivergenceConfig,
    pub workflow: WorkflowConfig,
    pub study: StudyConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    pub file: Option<PathBuf>,
    /// Bundled mechanism number, used when no file is given.
    pub fixture: Option<u8>,
    /// Parameters estimated and designed for.
    pub free: Vec<String>,
    pub initial_delta_g: f64,
    pub initial_activation: f64,
    /// Start fits from the mechanism's own energies instead of the guesses.
    pub start_at_truth: bool,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            file: None,
            fixture: Some(1),
            free: PRECISION_PARAMETERS.iter().map(|s| s.to_string()).collect(),
            initial_delta_g: INITIAL_DELTA_G,
            initial_activation: INITIAL_ACTIVATION,
            start_at_truth: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactorConfig {
    pub geometry: ReactorGeometry,
    pub solver: SolverOptions,
}

/// Propane/oxygen pump-probe design.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub c3h8_nmol: f64,
    pub o2_nmol: f64,
    pub delay_s: f64,
    pub temperature_k: f64,
    pub horizon_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = fixtures::initial_design();
        ExperimentConfig {
            c3h8_nmol: d.intensity("C3H8"),
            o2_nmol: d.intensity("O2"),
            delay_s: d.delay("C3H8"),
            temperature_k: d.temperature,
            horizon_s: d.horizon,
        }
    }
}

impl ExperimentConfig {
    pub fn design(&self) -> ExperimentDesign {
        ExperimentDesign::pump_probe(self.c3h8_nmol, self.o2_nmol, self.delay_s, self.temperature_k)
            .with_horizon(self.horizon_s)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Noise sigma as a fraction of each gas's noiseless peak in the
    /// initial experiment.
    pub noise_fraction: f64,
    /// Absolute sigma per gas (nmol/s); overrides `noise_fraction`.
    pub noise_sigma: Option<Vec<f64>>,
    pub noisy: bool,
    /// Gaussian perturbation of the truth per synthetic experiment, eV.
    pub truth_perturbation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { noise_fraction: 0.01, noise_sigma: None, noisy: true, truth_perturbation: 0.0 }
    }
}

impl SyntheticConfig {
    pub fn noise(&self, seed: u64) -> NoiseModel {
        match &self.noise_sigma {
            Some(s) => NoiseModel::absolute(s.clone(), seed),
            None => NoiseModel::fraction_of_peak(self.noise_fraction, seed),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Observed flux CSV for `fit`; synthetic data are generated otherwise.
    pub data: Option<PathBuf>,
    pub hessian: HessianChoice,
    pub optimizer: OptimizerOptions,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianChoice {
    #[default]
    FiniteDifference,
    GaussNewton,
}

impl EstimationConfig {
    pub fn fit_options(&self) -> FitOptions {
        let hessian = match self.hessian {
            HessianChoice::FiniteDifference => HessianMode::default(),
            HessianChoice::GaussNewton => HessianMode::GaussNewton,
        };
        FitOptions { optimizer: self.optimizer.clone(), hessian }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecisionConfig {
    pub space: DesignSpace,
    pub criterion: String,
    pub subset: Vec<String>,
    /// Central-difference step for sensitivities, eV; tangents when absent.
    pub fd_step: Option<f64>,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        PrecisionConfig { space: DesignSpace::default(), criterion: "D".into(), subset: Vec::new(), fd_step: None }
    }
}

impl PrecisionConfig {
    pub fn method(&self) -> SensitivityMethod {
        match self.fd_step {
            Some(step) => SensitivityMethod::CentralDifference { step },
            None => SensitivityMethod::Tangent,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub label: String,
    pub file: Option<PathBuf>,
    pub fixture: Option<u8>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { label: String::new(), file: None, fixture: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceConfig {
    pub space: DesignSpace,
    pub models: Vec<ModelConfig>,
    pub truth: String,
    pub refit: bool,
    pub bic_form: BicForm,
    /// Noise sigma as a fraction of the largest candidate peak per gas in
    /// the initial experiment.
    pub noise_fraction: f64,
    pub truth_perturbation: f64,
    /// |BIC difference| of the two best models below which discrimination
    /// is reported as lost.
    pub bic_threshold: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            space: DesignSpace::default(),
            models: (1..=3)
                .map(|n| ModelConfig { label: format!("mech{n}"), file: None, fixture: Some(n) })
                .collect(),
            truth: "mech2".into(),
            refit: false,
            bic_form: BicForm::default(),
            noise_fraction: 0.01,
            truth_perturbation: 0.05,
            bic_threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowConfig {
    /// Designed experiments after the initial one.
    pub max_iterations: usize,
    /// Continue only while the best predicted criterion improves on the
    /// current one by at least this factor.
    pub min_improvement: f64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig { max_iterations: 3, min_improvement: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    #[default]
    PredictedVsActual,
    DivergenceBic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: StudyKind,
    /// Designs studied, spread evenly over the ranking; 0 studies all.
    pub designs: usize,
    /// Hessian of the study refits.
    pub hessian: HessianChoice,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { kind: StudyKind::default(), designs: 0, hessian: HessianChoice::GaussNewton }
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> CliResult<()> {
        if !(self.workflow.min_improvement > 1.0) {
            return Err(CliError::Config("workflow.min_improvement must exceed 1".into()));
        }
        if !(self.synthetic.noise_fraction > 0.0) && self.synthetic.noise_sigma.is_none() {
            return Err(CliError::Config("synthetic.noise_fraction must be positive".into()));
        }
        if !(self.doe_divergence.noise_fraction > 0.0) {
            return Err(CliError::Config("doe_divergence.noise_fraction must be positive".into()));
        }
        self.criterion()?;
        Ok(())
    }

    pub fn criterion(&self) -> CliResult<Criterion> {
        Ok(Criterion::parse(&self.doe_precision.criterion)?)
    }

    pub fn simulator(&self) -> CliResult<Simulator> {
        self.reactor.geometry.validate()?;
        Ok(Simulator::new(self.reactor.geometry.clone(), self.reactor.solver.clone()))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    /// A mechanism file, or else one of the bundled mechanisms.
    pub fn load_mechanism(&self, file: Option<&Path>, fixture: Option<u8>) -> CliResult<Mechanism> {
        match (file, fixture) {
            (Some(file), _) => {
                let path = self.resolve(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read mechanism file {}: {e}", path.display())))?;
                parse_mechanism(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
            (None, Some(n @ 1..=3)) => Ok(fixtures::mechanism(n)),
            (None, Some(n)) => Err(CliError::Config(format!("no bundled mechanism {n} (expected 1, 2 or 3)"))),
            (None, None) => Err(CliError::Config("mechanism needs a file or a fixture number".into())),
        }
    }

    /// The mechanism with its file energies as truth and the configured
    /// parameters free.
    pub fn truth(&self) -> CliResult<(Mechanism, ParameterSet)> {
        let mech = self.load_mechanism(self.mechanism.file.as_deref(), self.mechanism.fixture)?;
        let free: Vec<&str> = self.mechanism.free.iter().map(String::as_str).collect();
        let params = ParameterSet::from_mechanism(&mech).with_free(&free)?;
        Ok((mech, params))
    }

    pub fn initial_guess(&self, truth: &ParameterSet) -> ParameterSet {
        if self.mechanism.start_at_truth {
            truth.clone()
        } else {
            truth.clone().with_initial_guess(self.mechanism.initial_delta_g, self.mechanism.initial_activation)
        }
    }

    pub fn candidate_models(&self) -> CliResult<Vec<CandidateModel>> {
        let free: Vec<&str> = self.mechanism.free.iter().map(String::as_str).collect();
        let models = self
            .doe_divergence
            .models
            .iter()
            .map(|m| {
                let mech = self.load_mechanism(m.file.as_deref(), m.fixture)?;
                let params = ParameterSet::from_mechanism(&mech).with_free(&free)?;
                Ok(CandidateModel::new(&m.label, mech, params)?)
            })
            .collect::<CliResult<Vec<_>>>()?;
        if models.len() < 2 {
            return Err(CliError::Config("doe_divergence needs at least two models".into()));
        }
        for (i, m) in models.iter().enumerate() {
            if models[..i].iter().any(|o| o.label == m.label) {
                return Err(CliError::Config(format!("duplicate model label '{}'", m.label)));
            }
        }
        if !models.iter().any(|m| m.label == self.doe_divergence.truth) {
            return Err(CliError::Config(format!("truth '{}' is not a model label", self.doe_divergence.truth)));
        }
        Ok(models)
    }

    pub fn discrimination(&self, refit: bool) -> DiscriminationOptions {
        DiscriminationOptions {
            truth_perturbation: self.doe_divergence.truth_perturbation,
            noisy: self.synthetic.noisy,
            seed: self.seed,
            refit,
            optimizer: self.estimation.optimizer.clone(),
            bic_form: self.doe_divergence.bic_form,
        }
    }

    pub fn study_options(&self) -> StudyOptions {
        let hessian = EstimationConfig { hessian: self.study.hessian, ..self.estimation.clone() };
        StudyOptions {
            truth_perturbation: self.synthetic.truth_perturbation,
            noisy: self.synthetic.noisy,
            seed: self.seed,
            fit: hessian.fit_options(),
        }
    }
}
