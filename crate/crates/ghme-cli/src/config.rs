//! Run configuration: JSON schema, validation, and built-in presets.

use std::path::{Path, PathBuf};

use ghme::estimate::{FitMethod, InfoVariant, MleStart};
use ghme::harness::{ColumnRoles, CovariateGen, LinkKind, NSchedule, Scenario, ThetaSpec};
use ghme::model::Family;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub roles: ColumnRoles,
    #[serde(default)]
    pub links: LinkKind,
    pub family: Family,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_fit_methods")]
    pub methods: Vec<FitMethod>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_mle_start")]
    pub mle_start: MleStart,
    #[serde(default = "default_se_variant")]
    pub se_variant: InfoVariant,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_mc_methods")]
    pub methods: Vec<FitMethod>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_mle_start")]
    pub mle_start: MleStart,
    #[serde(default = "default_se_variant")]
    pub se_variant: InfoVariant,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Fitted-parameter JSON written by `ghme fit`.
    pub params: PathBuf,
    /// Optional CSV of new covariate rows (id plus the x and z role columns)
    /// to forecast at.
    #[serde(default)]
    pub new_rows: Option<PathBuf>,
}

fn default_fit_methods() -> Vec<FitMethod> {
    vec![FitMethod::Initial, FitMethod::OneStep]
}
fn default_mc_methods() -> Vec<FitMethod> {
    vec![FitMethod::Initial, FitMethod::OneStep]
}
fn default_level() -> f64 {
    0.95
}
fn default_mle_start() -> MleStart {
    MleStart::Initial
}
fn default_se_variant() -> InfoVariant {
    InfoVariant::ObservedInfo
}
fn default_max_iter() -> usize {
    300
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_step_tol() -> f64 {
    1e-10
}
fn default_trials() -> usize {
    200
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Parse(PathBuf, serde_json::Error),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            ConfigError::Parse(p, e) => {
                write!(f, "config {} line {} column {}: {e}", p.display(), e.line(), e.column())
            }
            ConfigError::Invalid(msg) => write!(f, "config invalid: {msg}"),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    if let Some(sc) = &cfg.scenario {
        sc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    for (name, level) in [("fit.level", cfg.fit.level), ("mc.level", cfg.mc.level)] {
        if !(level > 0.0 && level < 1.0) {
            return Err(ConfigError::Invalid(format!("{name} must be in (0,1), got {level}")));
        }
    }
    if cfg.mc.trials == 0 {
        return Err(ConfigError::Invalid("mc.trials must be >= 1".into()));
    }
    if let Some(d) = &cfg.data {
        if d.roles.x.is_empty() {
            return Err(ConfigError::Invalid("data.roles.x must name at least one column".into()));
        }
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(ConfigError::Invalid("threads must be >= 1".into()));
        }
    }
    Ok(())
}

/// Built-in named configurations mirroring the simulation experiments.
pub fn preset(name: &str) -> Option<RunConfig> {
    let base = |theta: ThetaSpec, family: Family, covariates: CovariateGen, seed: u64| Scenario {
        n_individuals: 1000,
        n_schedule: NSchedule::Fixed(10),
        covariates,
        links: LinkKind::default(),
        theta_true: theta,
        family,
        seed,
    };
    let cold_start = vec![1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-4, 1e-3];
    let cfg = match name {
        "scenario-i" => RunConfig {
            scenario: Some(base(
                ThetaSpec {
                    beta: vec![0.3, 0.5],
                    alpha: vec![-0.04, 0.05],
                    tau: vec![0.05, 0.07],
                    lambda: 1.2,
                    delta: 1.5,
                    gamma: 2.0,
                },
                Family::Full,
                CovariateGen::IidGauss,
                20230101,
            )),
            ..empty()
        },
        "scenario-ii" => RunConfig {
            scenario: Some(base(
                ThetaSpec {
                    beta: vec![0.3, 1.2],
                    alpha: vec![-0.4, 0.8],
                    tau: vec![0.05, 0.007],
                    lambda: 0.9,
                    delta: 1.2,
                    gamma: 0.9,
                },
                Family::Full,
                CovariateGen::GaussPlusTimeindex,
                20230102,
            )),
            ..empty()
        },
        "scenario-i-prime" => RunConfig {
            scenario: Some(base(
                sec32_theta(),
                Family::FixedLambda(-0.5),
                CovariateGen::IidGauss,
                20230103,
            )),
            fit: FitConfig {
                methods: vec![FitMethod::Initial, FitMethod::OneStep, FitMethod::Mle],
                mle_start: MleStart::Truth,
                ..Default::default()
            },
            mc: McConfig { mle_start: MleStart::Truth, ..Default::default() },
            ..empty()
        },
        "scenario-ii-prime" => RunConfig {
            scenario: Some(base(
                sec32_theta(),
                Family::FixedLambda(-0.5),
                CovariateGen::IidGauss,
                20230104,
            )),
            fit: FitConfig {
                methods: vec![FitMethod::Initial, FitMethod::OneStep, FitMethod::Mle],
                mle_start: MleStart::ColdStart(cold_start.clone()),
                ..Default::default()
            },
            mc: McConfig {
                mle_start: MleStart::ColdStart(cold_start.clone()),
                ..Default::default()
            },
            ..empty()
        },
        "paper-cold-start" => RunConfig {
            scenario: Some(base(
                ThetaSpec {
                    beta: vec![-3.0, 5.0],
                    alpha: vec![-3.0, 4.0],
                    tau: vec![0.02, -0.05],
                    lambda: -0.5,
                    delta: 1.6,
                    gamma: 1.0,
                },
                Family::FixedLambda(-0.5),
                CovariateGen::IidGauss,
                20230105,
            )),
            fit: FitConfig {
                methods: vec![FitMethod::Initial, FitMethod::OneStep, FitMethod::Mle],
                mle_start: MleStart::ColdStart(cold_start),
                ..Default::default()
            },
            ..empty()
        },
        "table4-case-i-desk" => RunConfig {
            scenario: Some(base(
                sec32_theta(),
                Family::FixedLambda(-0.5),
                CovariateGen::IidGauss,
                20230106,
            )),
            mc: McConfig {
                trials: 200,
                methods: vec![FitMethod::OneStep, FitMethod::Mle],
                mle_start: MleStart::Truth,
                ..Default::default()
            },
            ..empty()
        },
        _ => return None,
    };
    Some(cfg)
}

fn sec32_theta() -> ThetaSpec {
    ThetaSpec {
        beta: vec![3.0, 5.0],
        alpha: vec![-4.0, 5.0],
        tau: vec![0.05, 0.07],
        lambda: -0.5,
        delta: 1.5,
        gamma: 0.7,
    }
}

fn empty() -> RunConfig {
    RunConfig {
        scenario: None,
        data: None,
        fit: FitConfig::default(),
        mc: McConfig::default(),
        predict: None,
        out_dir: None,
        seed: None,
        threads: None,
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "scenario-i",
    "scenario-ii",
    "scenario-i-prime",
    "scenario-ii-prime",
    "paper-cold-start",
    "table4-case-i-desk",
];
