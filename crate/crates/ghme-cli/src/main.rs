//! Command-line front end: simulate datasets, fit models, run Monte Carlo
//! coverage experiments, and predict random effects.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{load_config, preset, ConfigError, RunConfig, PRESET_NAMES};

#[derive(Parser)]
#[command(
    name = "ghme",
    about = "Generalized hyperbolic mixed-effects models: simulation, fitting, inference"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Path to a JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration name (scenario-i, scenario-ii, scenario-i-prime,
    /// scenario-ii-prime, paper-cold-start, table4-case-i-desk).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (falls back to GHME_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a dataset from the configured scenario and write it as CSV.
    Simulate,
    /// Fit the configured methods to data (from file or simulated).
    Fit,
    /// Run a Monte Carlo coverage experiment and emit report CSVs.
    Mc,
    /// Empirical-Bayes random-effect prediction from a fitted-parameter file.
    Predict,
}

/// Process-level error with its exit code: 2 config, 3 data, 4 numerical.
pub enum AppError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, AppError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => {
            return Err(AppError::Config(
                "--config and --preset are mutually exclusive".into(),
            ))
        }
        (Some(path), None) => load_config(path)?,
        (None, Some(name)) => preset(name).ok_or_else(|| {
            AppError::Config(format!(
                "unknown preset '{name}' (available: {})",
                PRESET_NAMES.join(", ")
            ))
        })?,
        (None, None) => {
            return Err(AppError::Config("one of --config or --preset is required".into()))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
        if let Some(sc) = cfg.scenario.as_mut() {
            sc.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    } else if cfg.threads.is_none() {
        if let Ok(env) = std::env::var("GHME_THREADS") {
            let t: usize = env.parse().map_err(|_| {
                AppError::Config(format!("GHME_THREADS must be a positive integer, got '{env}'"))
            })?;
            cfg.threads = Some(t);
        }
    }
    config::validate(&cfg)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(t) = cfg.threads {
        // ignore failure when a pool was already configured for the process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = match cli.cmd {
        Cmd::Simulate => commands::simulate(&cfg),
        Cmd::Fit => commands::fit(&cfg),
        Cmd::Mc => commands::mc(&cfg),
        Cmd::Predict => commands::predict(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: AppError) -> ExitCode {
    let (label, code) = match &e {
        AppError::Config(_) => ("config error", 2),
        AppError::Data(_) => ("data error", 3),
        AppError::Numeric(_) => ("numerical failure", 4),
    };
    let msg = match e {
        AppError::Config(m) | AppError::Data(m) | AppError::Numeric(m) => m,
    };
    eprintln!("ghme: {label}: {msg}");
    ExitCode::from(code)
}
