//! `tap-doe`: simulate TAP experiments, fit kinetic parameters and design
//! new experiments for parameter precision or mechanism discrimination.

mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tap_core::doe::precision::Criterion;

use commands::{Overrides, Run};
use config::Config;
use error::CliResult;
use output::Output;

#[derive(Debug, Parser)]
#[command(name = "tap-doe", version, about = "Model-based design of TAP pulse-response experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for synthetic noise and perturbations (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Refit candidate parameters before scoring models.
    #[arg(long, global = true)]
    refit: bool,

    /// Optimality criterion for precision design.
    #[arg(long, global = true, value_enum, ignore_case = true)]
    criterion: Option<CriterionArg>,

    /// Design for these parameters only, e.g. `dG1` or `dG0,Ga3`.
    #[arg(long, global = true, value_delimiter = ',')]
    subset: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate the configured experiment.
    Simulate,
    /// Fit the free parameters to observed or synthetic data.
    Fit,
    /// Rank the design grid by predicted parameter precision.
    DoePrecision,
    /// Rank the design grid by divergence between candidate mechanisms.
    DoeDivergence,
    /// Iterate fit / design / experiment until precision saturates.
    WorkflowPrecision,
    /// Pick the most discriminating experiment, run it and score the models.
    WorkflowDivergence,
    /// Predicted-vs-actual or divergence-vs-BIC study over the grid.
    Study,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::DoePrecision => "doe-precision",
            Command::DoeDivergence => "doe-divergence",
            Command::WorkflowPrecision => "workflow-precision",
            Command::WorkflowDivergence => "workflow-divergence",
            Command::Study => "study",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "UPPER")]
enum CriterionArg {
    A,
    D,
    E,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::A => Criterion::A,
            CriterionArg::D => Criterion::D,
            CriterionArg::E => Criterion::E,
        }
    }
}

fn execute(cli: &Cli) -> CliResult<String> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let overrides = Overrides { criterion: cli.criterion.map(Into::into), subset: cli.subset.clone(), refit: cli.refit };
    let mut out = Output::create(&cli.out, cli.command.name(), config.seed, cli.config.as_deref())?;
    let run = Run { config: &config, out: &mut out, overrides: &overrides };
    let result = match cli.command {
        Command::Simulate => commands::simulate(run),
        Command::Fit => commands::fit_cmd(run),
        Command::DoePrecision => commands::doe_precision(run),
        Command::DoeDivergence => commands::doe_divergence(run),
        Command::WorkflowPrecision => commands::workflow_precision(run),
        Command::WorkflowDivergence => commands::workflow_divergence(run),
        Command::Study => commands::study(run),
    };
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => e.to_string(),
    };
    out.finish(&status)?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tap-doe {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
