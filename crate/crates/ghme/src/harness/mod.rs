//! Scenario-driven simulation and Monte Carlo coverage experiments.

mod report;

pub use report::{emit_report, read_report, McReport, MethodReport};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::GigSampler;
use crate::estimate::{
    initial_estimator, matrix_sqrt, mle, one_step, studentize, FitMethod, FitOptions, FitResult,
    InfoVariant, MleStart,
};
use crate::model::{
    Family, IndividualRecord, LinkSpec, LongitudinalDataset, MeanLink, ParamLayout, Theta,
    VarLink,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario invalid: {0}")]
    BadScenario(String),
    #[error("covariate file error at {path}: {reason}")]
    CovariateFile { path: String, reason: String },
    #[error("i/o error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("report parse error in {path}: {reason}")]
    BadReport { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Dist(#[from] crate::dist::DistError),
}

/// Number of observations per individual.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NSchedule {
    Fixed(usize),
    List(Vec<usize>),
}

impl NSchedule {
    fn resolve(&self, n_individuals: usize) -> Result<Vec<usize>, HarnessError> {
        match self {
            NSchedule::Fixed(n) => {
                if *n == 0 {
                    return Err(HarnessError::BadScenario("n_schedule must be >= 1".into()));
                }
                Ok(vec![*n; n_individuals])
            }
            NSchedule::List(ns) => {
                if ns.len() != n_individuals {
                    return Err(HarnessError::BadScenario(format!(
                        "n_schedule list has {} entries for {} individuals",
                        ns.len(),
                        n_individuals
                    )));
                }
                if ns.iter().any(|&n| n == 0) {
                    return Err(HarnessError::BadScenario("n_schedule entries must be >= 1".into()));
                }
                Ok(ns.clone())
            }
        }
    }
}

/// How per-observation covariates are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateGen {
    /// All components i.i.d. standard normal.
    IidGauss,
    /// First components standard normal, second components the within-
    /// individual time index j-1.
    GaussPlusTimeindex,
    /// Covariate layout (x, z, w, and group sizes) taken from a data file;
    /// responses are regenerated from the model.
    FromFile { path: String, roles: ColumnRoles },
}

/// Column role mapping for CSV data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub id: String,
    pub y: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub w: Vec<String>,
}

/// Serializable link choice (custom links are code-level only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SKind {
    TanhLinear,
    Linear,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma2Kind {
    ExpLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkKind {
    pub s: SKind,
    pub sigma2: Sigma2Kind,
}

impl LinkKind {
    pub fn to_spec(self) -> LinkSpec {
        let mean = match self.s {
            SKind::TanhLinear => MeanLink::TanhLinear,
            SKind::Linear => MeanLink::Linear,
            SKind::Zero => MeanLink::Zero,
        };
        let var = match self.sigma2 {
            Sigma2Kind::ExpLinear => VarLink::ExpLinear,
        };
        LinkSpec { mean, var }
    }
}

impl Default for LinkKind {
    fn default() -> Self {
        Self { s: SKind::TanhLinear, sigma2: Sigma2Kind::ExpLinear }
    }
}

/// Flat parameter spec used in scenario/config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSpec {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tau: Vec<f64>,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl ThetaSpec {
    pub fn to_theta(&self) -> Theta {
        Theta::new(
            DVector::from_vec(self.beta.clone()),
            DVector::from_vec(self.alpha.clone()),
            DVector::from_vec(self.tau.clone()),
            self.lambda,
            self.delta,
            self.gamma,
        )
    }

    pub fn from_theta(th: &Theta) -> Self {
        Self {
            beta: th.beta.iter().cloned().collect(),
            alpha: th.alpha.iter().cloned().collect(),
            tau: th.tau.iter().cloned().collect(),
            lambda: th.lambda,
            delta: th.delta,
            gamma: th.gamma,
        }
    }
}

/// A complete simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_individuals: usize,
    pub n_schedule: NSchedule,
    #[serde(default = "default_covariates")]
    pub covariates: CovariateGen,
    #[serde(default)]
    pub links: LinkKind,
    pub theta_true: ThetaSpec,
    pub family: Family,
    pub seed: u64,
}

fn default_covariates() -> CovariateGen {
    CovariateGen::IidGauss
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_individuals == 0 {
            return Err(HarnessError::BadScenario("need at least one individual".into()));
        }
        let th = self.theta_true.to_theta();
        if !th.admissible_interior() {
            return Err(HarnessError::BadScenario(format!(
                "theta_true not admissible-interior (lambda={}, delta={}, gamma={})",
                th.lambda, th.delta, th.gamma
            )));
        }
        self.n_schedule.resolve(self.n_individuals)?;
        Ok(())
    }

    pub fn link_spec(&self) -> LinkSpec {
        self.links.to_spec()
    }
}

/// SplitMix64; used to derive independent per-trial seeds from the master so
/// any single trial can be reproduced in isolation.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    let mut z = master.wrapping_add((trial + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw one dataset from the scenario, returning the latent random effects
/// alongside for oracle tests and prediction scoring.
pub fn simulate_dataset(sc: &Scenario) -> Result<(LongitudinalDataset, Vec<f64>), HarnessError> {
    simulate_with_seed(sc, sc.seed)
}

pub fn simulate_with_seed(
    sc: &Scenario,
    seed: u64,
) -> Result<(LongitudinalDataset, Vec<f64>), HarnessError> {
    sc.validate()?;
    let th = sc.theta_true.to_theta();
    let links = sc.link_spec();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let ns = sc.n_schedule.resolve(sc.n_individuals)?;
    let sampler = GigSampler::new(&th.gig())?;

    let template: Option<Vec<(String, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>> =
        if let CovariateGen::FromFile { path, roles } = &sc.covariates {
            let ds = crate::data_io::read_dataset_csv(path, roles)
                .map_err(|e| HarnessError::CovariateFile { path: path.clone(), reason: e.to_string() })?;
            Some(
                ds.records()
                    .iter()
                    .map(|r| (r.id.clone(), r.x.clone(), r.z.clone(), r.w.clone()))
                    .collect(),
            )
        } else {
            None
        };

    let n_individuals = template.as_ref().map_or(sc.n_individuals, Vec::len);
    let mut records = Vec::with_capacity(n_individuals);
    let mut latent = Vec::with_capacity(n_individuals);
    for i in 0..n_individuals {
        let v = sampler.draw(&mut rng);
        latent.push(v);
        let (id, x, z, w) = match &template {
            Some(t) => t[i].clone(),
            None => {
                let n = ns[i];
                let gen = |rng: &mut ChaCha12Rng, cols: usize| -> DMatrix<f64> {
                    DMatrix::from_fn(n, cols, |j, k| {
                        if matches!(sc.covariates, CovariateGen::GaussPlusTimeindex) && k == 1 {
                            j as f64
                        } else {
                            rng.sample::<f64, _>(StandardNormal)
                        }
                    })
                };
                let x = gen(&mut rng, th.beta.len());
                let z = gen(&mut rng, th.alpha.len());
                let w = gen(&mut rng, th.tau.len());
                (format!("id{i:05}"), x, z, w)
            }
        };
        let n = x.nrows();
        let y = DVector::from_fn(n, |j, _| {
            let zr: Vec<f64> = z.row(j).iter().cloned().collect();
            let wr: Vec<f64> = w.row(j).iter().cloned().collect();
            let s = links.s_value(&zr, &th.alpha);
            let sig2 = links.sig2_value(&wr, &th.tau);
            let mean: f64 = x.row(j).iter().zip(th.beta.iter()).map(|(a, b)| a * b).sum();
            let eps: f64 = rng.sample(StandardNormal);
            mean + s * v + (v * sig2).sqrt() * eps
        });
        records.push(
            IndividualRecord::new(id, y, x, z, w).expect("simulated record is well-formed"),
        );
    }
    Ok((LongitudinalDataset::new(records)?, latent))
}

/// Options for a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub methods: Vec<FitMethod>,
    pub level: f64,
    pub mle_start: MleStart,
    pub se_variant: InfoVariant,
    pub max_iter: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            methods: vec![FitMethod::Initial, FitMethod::OneStep],
            level: 0.95,
            mle_start: MleStart::Initial,
            se_variant: InfoVariant::ObservedInfo,
            max_iter: 300,
        }
    }
}

struct MethodTally {
    method: FitMethod,
    used: Vec<usize>,
    covered: Vec<Vec<bool>>,
    estimates: Vec<DVector<f64>>,
    standardized: Vec<Vec<f64>>,
    chisq: Vec<f64>,
    wall: Vec<f64>,
    excluded: usize,
}

/// Run the full simulate -> fit -> Studentize -> tally pipeline.
///
/// Per-trial failures (singular Hessian, indefinite information,
/// non-convergence, boundary escapes) exclude the trial from that method's
/// tallies and are counted, mirroring the exclusion convention of the
/// coverage experiments.
pub fn mc_run(sc: &Scenario, trials: usize, opts: &McOptions) -> Result<McReport, HarnessError> {
    sc.validate()?;
    assert!(trials >= 1, "mc_run needs at least one trial");
    let links = sc.link_spec();
    let truth = sc.theta_true.to_theta();
    let layout = ParamLayout::new(
        truth.beta.len(),
        links.mean_param_dim(truth.alpha.len()),
        links.var_param_dim(truth.tau.len()),
        sc.family,
    );
    let fit_opts = FitOptions { max_iter: opts.max_iter, ..Default::default() };

    type TrialResult = Vec<Option<(DVector<f64>, Vec<bool>, Vec<f64>, f64, f64)>>;
    let run_trial = |t: usize| -> TrialResult {
        let seed = trial_seed(sc.seed, t as u64);
        let Ok((ds, _)) = simulate_with_seed(sc, seed) else {
            return vec![None; opts.methods.len()];
        };
        let init = initial_estimator(&ds, &links, sc.family, &fit_opts.bounds);
        opts.methods
            .iter()
            .map(|&method| {
                let started = std::time::Instant::now();
                let fit: Result<FitResult, _> = match method {
                    FitMethod::Initial => init.as_ref().map_err(|e| e.to_string()).and_then(|f| {
                        let mut out = FitResult::bare(f.theta.clone(), FitMethod::Initial, layout);
                        out.converged = true;
                        crate::model::loglik(&ds, &f.theta, &links)
                            .map(|ll| {
                                out.loglik_value = ll;
                                out
                            })
                            .map_err(|e| e.to_string())
                    }),
                    FitMethod::OneStep => init
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|f| {
                            one_step(&ds, &links, &f.theta, sc.family, &fit_opts)
                                .map_err(|e| e.to_string())
                        }),
                    FitMethod::Mle => {
                        let start_point = match &opts.mle_start {
                            MleStart::Truth => Ok(truth.clone()),
                            MleStart::Initial => {
                                init.as_ref().map(|f| f.theta.clone()).map_err(|e| e.to_string())
                            }
                            MleStart::ColdStart(v) => {
                                let full = DVector::from_vec(v.clone());
                                Ok(Theta::from_full_vec(
                                    &layout.unpack(&layout.select_vec(&pad_full(
                                        &full, &layout,
                                    )))
                                    .to_full_vec(),
                                    layout.p_beta,
                                    layout.p_alpha,
                                    layout.p_tau,
                                ))
                            }
                        };
                        start_point.and_then(|sp| {
                            mle(&ds, &links, &sp, sc.family, &fit_opts)
                                .map_err(|e| e.to_string())
                                .and_then(|f| {
                                    if f.converged && f.at_bounds.is_empty() {
                                        Ok(f)
                                    } else {
                                        Err("mle unstable (non-convergent or on boundary)".into())
                                    }
                                })
                        })
                    }
                };
                let tallied = fit.and_then(|f| {
                    studentize(&ds, &links, f, opts.se_variant, opts.level, Some(&truth))
                        .map_err(|e| e.to_string())
                });
                match tallied {
                    Ok(f) => {
                        let est = layout.pack(&f.theta_hat);
                        let tv = layout.pack(&truth);
                        let covered: Vec<bool> = (0..est.len())
                            .map(|k| {
                                tv[k] >= f.ci_low.as_ref().unwrap()[k]
                                    && tv[k] <= f.ci_high.as_ref().unwrap()[k]
                            })
                            .collect();
                        let root = matrix_sqrt(f.observed_info.as_ref().unwrap());
                        let std_est: Vec<f64> = (&root * (&est - &tv)).iter().cloned().collect();
                        let wald = f.wald_chisq.unwrap();
                        Some((est, covered, std_est, wald, started.elapsed().as_secs_f64()))
                    }
                    Err(_) => None,
                }
            })
            .collect()
    };

    let all: Vec<TrialResult> = (0..trials).into_par_iter().map(run_trial).collect();

    let p = layout.free_dim();
    let tv = layout.pack(&truth);
    let mut tallies: Vec<MethodTally> = opts
        .methods
        .iter()
        .map(|&m| MethodTally {
            method: m,
            used: Vec::new(),
            covered: Vec::new(),
            estimates: Vec::new(),
            standardized: Vec::new(),
            chisq: Vec::new(),
            wall: Vec::new(),
            excluded: 0,
        })
        .collect();
    for (t, per_method) in all.into_iter().enumerate() {
        for (mi, outcome) in per_method.into_iter().enumerate() {
            match outcome {
                Some((est, covered, std_est, wald, wall)) => {
                    let tl = &mut tallies[mi];
                    tl.used.push(t);
                    tl.covered.push(covered);
                    tl.estimates.push(est);
                    tl.standardized.push(std_est);
                    tl.chisq.push(wald);
                    tl.wall.push(wall);
                }
                None => tallies[mi].excluded += 1,
            }
        }
    }

    let methods = tallies
        .into_iter()
        .map(|tl| {
            let used_n = tl.used.len();
            let coverage: Vec<f64> = (0..p)
                .map(|k| {
                    if used_n == 0 {
                        f64::NAN
                    } else {
                        tl.covered.iter().filter(|c| c[k]).count() as f64 / used_n as f64
                    }
                })
                .collect();
            let rmse: Vec<f64> = (0..p)
                .map(|k| {
                    if used_n == 0 {
                        f64::NAN
                    } else {
                        (tl.estimates.iter().map(|e| (e[k] - tv[k]).powi(2)).sum::<f64>()
                            / used_n as f64)
                            .sqrt()
                    }
                })
                .collect();
            let mut wall = tl.wall.clone();
            wall.sort_by(f64::total_cmp);
            MethodReport {
                method: tl.method,
                trials_used: used_n,
                excluded: tl.excluded,
                used_trial_indices: tl.used,
                coverage,
                rmse,
                standardized: tl.standardized,
                chisq: tl.chisq,
                wall_q50: crate::util::quantile(&wall, 0.5),
                wall_q90: crate::util::quantile(&wall, 0.9),
            }
        })
        .collect();

    Ok(McReport {
        n_individuals: sc.n_individuals,
        trials,
        level: opts.level,
        seed: sc.seed,
        param_names: layout.names(),
        methods,
    })
}

fn pad_full(v: &DVector<f64>, layout: &ParamLayout) -> DVector<f64> {
    // accept either a free-coordinate vector or a full one
    if v.len() == layout.full_dim() {
        return v.clone();
    }
    assert_eq!(
        v.len(),
        layout.free_dim(),
        "cold start vector must have the family's dimension"
    );
    let mut full = DVector::zeros(layout.full_dim());
    if let Family::FixedLambda(l) = layout.family {
        full[layout.lambda_index_full()] = l;
    }
    for (k, &i) in layout.free_indices().iter().enumerate() {
        full[i] = v[k];
    }
    full
}
