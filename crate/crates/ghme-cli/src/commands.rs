//! The simulate / fit / mc / predict commands.

use std::path::{Path, PathBuf};

use ghme::data_io::{read_dataset_csv, write_dataset_csv, write_latent_csv};
use ghme::estimate::{
    initial_estimator, mle, one_step, studentize, FitMethod, FitOptions, FitResult, MleStart,
};
use ghme::harness::{emit_report, mc_run, simulate_dataset, ColumnRoles, LinkKind, McOptions, Scenario, ThetaSpec};
use ghme::model::{Family, LinkSpec, LongitudinalDataset, Theta};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::AppError;

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

/// Format with six significant digits, the table precision used throughout.
fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag).max(0) as usize, x)
    } else {
        format!("{:.5e}", x)
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<(), AppError> {
    let sc = need_scenario(cfg)?;
    let (ds, latent) =
        simulate_dataset(sc).map_err(|e| AppError::Numeric(e.to_string()))?;
    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| AppError::Data(format!("{}: {e}", dir.display())))?;
    let data_path = dir.join("dataset.csv");
    let latent_path = dir.join("latent.csv");
    write_dataset_csv(&ds, &data_path).map_err(|e| AppError::Data(e.to_string()))?;
    let ids: Vec<String> = ds.records().iter().map(|r| r.id.clone()).collect();
    write_latent_csv(&ids, &latent, &latent_path).map_err(|e| AppError::Data(e.to_string()))?;
    println!(
        "simulated {} individuals, {} observations (seed {})",
        ds.n_individuals(),
        ds.n_obs_total(),
        sc.seed
    );
    print_theta("theta_true", &sc.theta_true.to_theta(), sc.family);
    println!("wrote {} and {}", data_path.display(), latent_path.display());
    Ok(())
}

fn need_scenario(cfg: &RunConfig) -> Result<&Scenario, AppError> {
    cfg.scenario
        .as_ref()
        .ok_or_else(|| AppError::Config("this command needs a 'scenario' section".into()))
}

fn print_theta(label: &str, th: &Theta, family: Family) {
    let mut parts = Vec::new();
    for (i, b) in th.beta.iter().enumerate() {
        parts.push(format!("beta{i}={}", sig6(*b)));
    }
    for (i, a) in th.alpha.iter().enumerate() {
        parts.push(format!("alpha{i}={}", sig6(*a)));
    }
    for (i, t) in th.tau.iter().enumerate() {
        parts.push(format!("tau{i}={}", sig6(*t)));
    }
    if family.has_lambda() {
        parts.push(format!("lambda={}", sig6(th.lambda)));
    }
    parts.push(format!("delta={}", sig6(th.delta)));
    parts.push(format!("gamma={}", sig6(th.gamma)));
    println!("{label}: {}", parts.join(", "));
}

/// Fitted-parameter file written by `fit` and consumed by `predict`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitFile {
    pub family: Family,
    pub links: LinkKind,
    pub roles: Option<ColumnRoles>,
    pub fits: Vec<FitEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitEntry {
    pub method: FitMethod,
    pub theta: ThetaSpec,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub se: Option<Vec<f64>>,
    pub ci_low: Option<Vec<f64>>,
    pub ci_high: Option<Vec<f64>>,
    pub level: Option<f64>,
    pub warnings: Vec<String>,
}

struct FitInput {
    ds: LongitudinalDataset,
    links: LinkSpec,
    link_kind: LinkKind,
    family: Family,
    truth: Option<Theta>,
    roles: Option<ColumnRoles>,
}

fn fit_input(cfg: &RunConfig) -> Result<FitInput, AppError> {
    if let Some(d) = &cfg.data {
        let ds = read_dataset_csv(&d.path, &d.roles).map_err(|e| AppError::Data(e.to_string()))?;
        Ok(FitInput {
            ds,
            links: d.links.to_spec(),
            link_kind: d.links,
            family: d.family,
            truth: None,
            roles: Some(d.roles.clone()),
        })
    } else if let Some(sc) = &cfg.scenario {
        let (ds, _) = simulate_dataset(sc).map_err(|e| AppError::Numeric(e.to_string()))?;
        Ok(FitInput {
            ds,
            links: sc.link_spec(),
            link_kind: sc.links,
            family: sc.family,
            truth: Some(sc.theta_true.to_theta()),
            roles: None,
        })
    } else {
        Err(AppError::Config("fit needs either a 'data' or a 'scenario' section".into()))
    }
}

pub fn fit(cfg: &RunConfig) -> Result<(), AppError> {
    let input = fit_input(cfg)?;
    let opts = FitOptions {
        max_iter: cfg.fit.max_iter,
        grad_tol: cfg.fit.grad_tol,
        step_tol: cfg.fit.step_tol,
        ..Default::default()
    };

    // canonical order: initial -> one_step -> mle
    let mut methods = cfg.fit.methods.clone();
    methods.sort_by_key(|m| match m {
        FitMethod::Initial => 0,
        FitMethod::OneStep => 1,
        FitMethod::Mle => 2,
    });
    methods.dedup();

    let needs_initial = methods.iter().any(|m| {
        matches!(m, FitMethod::Initial | FitMethod::OneStep)
            || (matches!(m, FitMethod::Mle) && cfg.fit.mle_start == MleStart::Initial)
    });
    let init = if needs_initial {
        Some(
            initial_estimator(&input.ds, &input.links, input.family, &opts.bounds)
                .map_err(|e| AppError::Numeric(render_fit_error(&e)))?,
        )
    } else {
        None
    };

    let mut entries = Vec::new();
    for method in &methods {
        let fit_res: FitResult = match method {
            FitMethod::Initial => {
                let f = init.as_ref().unwrap();
                let ll = ghme::model::loglik(&input.ds, &f.theta, &input.links)
                    .map_err(|e| AppError::Numeric(e.to_string()))?;
                let layout = ghme::model::ParamLayout::for_model(
                    &input.ds,
                    &input.links,
                    input.family,
                );
                let mut out = FitResult::bare(f.theta.clone(), FitMethod::Initial, layout);
                out.loglik_value = ll;
                out.converged = true;
                out.wall_time = f.wall_time;
                out.warnings = f.warnings.clone();
                out
            }
            FitMethod::OneStep => one_step(
                &input.ds,
                &input.links,
                &init.as_ref().unwrap().theta,
                input.family,
                &opts,
            )
            .map_err(|e| AppError::Numeric(render_fit_error(&e)))?,
            FitMethod::Mle => {
                let start = match &cfg.fit.mle_start {
                    MleStart::Initial => init.as_ref().unwrap().theta.clone(),
                    MleStart::Truth => input.truth.clone().ok_or_else(|| {
                        AppError::Config(
                            "mle_start = truth needs a scenario with theta_true".into(),
                        )
                    })?,
                    MleStart::ColdStart(v) => cold_start_theta(v, &input, cfg)?,
                };
                mle(&input.ds, &input.links, &start, input.family, &opts)
                    .map_err(|e| AppError::Numeric(render_fit_error(&e)))?
            }
        };
        // Studentize everything except a bare initial fit; the initial
        // estimator is a point estimate and computing its information would
        // defeat the cheap-start contract.
        let fit_res = if matches!(method, FitMethod::Initial) {
            fit_res
        } else {
            match studentize(
                &input.ds,
                &input.links,
                fit_res,
                cfg.fit.se_variant,
                cfg.fit.level,
                None,
            ) {
                Ok(f) => f,
                Err(ghme::estimate::EstimateError::IndefiniteInfo { min_eig }) => {
                    println!(
                        "warning: information matrix not positive definite (min eigenvalue {}); intervals omitted",
                        sig6(min_eig)
                    );
                    // refit object without intervals
                    let f = one_step_like_placeholder(&input, &opts, method, &init, cfg)?;
                    f
                }
                Err(e) => return Err(AppError::Numeric(render_fit_error(&e))),
            }
        };
        print_fit(&fit_res, &input);
        entries.push(to_entry(&fit_res));
    }

    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| AppError::Data(format!("{}: {e}", dir.display())))?;
    let path = dir.join("fit.json");
    let file = FitFile {
        family: input.family,
        links: input.link_kind,
        roles: input.roles,
        fits: entries,
    };
    let json = serde_json::to_string_pretty(&file).expect("fit file serializes");
    std::fs::write(&path, json).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

// re-run the fit without Studentization when the information matrix is
// indefinite, so the point estimate is still reported
fn one_step_like_placeholder(
    input: &FitInput,
    opts: &FitOptions,
    method: &FitMethod,
    init: &Option<ghme::estimate::InitialFit>,
    cfg: &RunConfig,
) -> Result<FitResult, AppError> {
    match method {
        FitMethod::OneStep => one_step(
            &input.ds,
            &input.links,
            &init.as_ref().unwrap().theta,
            input.family,
            opts,
        )
        .map_err(|e| AppError::Numeric(render_fit_error(&e))),
        FitMethod::Mle => {
            let start = match &cfg.fit.mle_start {
                MleStart::Initial => init.as_ref().unwrap().theta.clone(),
                MleStart::Truth => input.truth.clone().unwrap(),
                MleStart::ColdStart(v) => cold_start_theta(v, input, cfg)?,
            };
            mle(&input.ds, &input.links, &start, input.family, opts)
                .map_err(|e| AppError::Numeric(render_fit_error(&e)))
        }
        FitMethod::Initial => unreachable!("initial fits are not Studentized"),
    }
}

fn cold_start_theta(v: &[f64], input: &FitInput, _cfg: &RunConfig) -> Result<Theta, AppError> {
    let layout = ghme::model::ParamLayout::for_model(&input.ds, &input.links, input.family);
    if v.len() != layout.free_dim() {
        return Err(AppError::Config(format!(
            "cold_start has {} entries but the family has {} free parameters",
            v.len(),
            layout.free_dim()
        )));
    }
    Ok(layout.unpack(&DVector::from_vec(v.to_vec())))
}

fn render_fit_error(e: &ghme::estimate::EstimateError) -> String {
    use ghme::estimate::EstimateError as E;
    let hint = match e {
        E::DegenerateSkew { .. } => {
            "; hint: the skew link is numerically zero, fix lambda (family fixed_lambda) or use a nonzero s link"
        }
        E::SingularHessian { .. } => {
            "; hint: the Hessian is degenerate at this point, try the one-step estimator or another start"
        }
        E::InversionFailed { .. } => {
            "; hint: moment triple outside the invertible region, consider the fixed-lambda family"
        }
        _ => "",
    };
    format!("{e}{hint}")
}

fn to_entry(f: &FitResult) -> FitEntry {
    FitEntry {
        method: f.method,
        theta: ThetaSpec::from_theta(&f.theta_hat),
        loglik: f.loglik_value,
        converged: f.converged,
        iterations: f.iterations,
        wall_seconds: f.wall_time.as_secs_f64(),
        se: f.se.as_ref().map(|v| v.iter().cloned().collect()),
        ci_low: f.ci_low.as_ref().map(|v| v.iter().cloned().collect()),
        ci_high: f.ci_high.as_ref().map(|v| v.iter().cloned().collect()),
        level: f.level,
        warnings: f.warnings.clone(),
    }
}

fn print_fit(f: &FitResult, input: &FitInput) {
    println!("== {} (loglik {}, {:.3}s)", f.method, sig6(f.loglik_value), f.wall_time.as_secs_f64());
    if !f.converged {
        println!("   NOT CONVERGED after {} iterations", f.iterations);
    }
    if !f.at_bounds.is_empty() {
        let names = f.layout.names();
        let which: Vec<&str> = f.at_bounds.iter().map(|&i| names[i].as_str()).collect();
        println!("   at parameter box boundary: {}", which.join(", "));
    }
    if f.hessian_singular {
        println!("   observed information numerically singular at the solution");
    }
    let names = f.layout.names();
    let est = f.layout.pack(&f.theta_hat);
    for k in 0..names.len() {
        let mut line = format!("   {:<8} {}", names[k], sig6(est[k]));
        if let (Some(se), Some(lo), Some(hi)) = (&f.se, &f.ci_low, &f.ci_high) {
            line.push_str(&format!(
                "  (se {}, ci [{}, {}])",
                sig6(se[k]),
                sig6(lo[k]),
                sig6(hi[k])
            ));
        }
        println!("{line}");
    }
    if let Some(truth) = &input.truth {
        let tv = f.layout.pack(truth);
        let dev = (est - tv).amax();
        println!("   max |estimate - truth| = {}", sig6(dev));
    }
    for w in &f.warnings {
        println!("   warning: {w}");
    }
}

pub fn mc(cfg: &RunConfig) -> Result<(), AppError> {
    let sc = need_scenario(cfg)?;
    let opts = McOptions {
        methods: cfg.mc.methods.clone(),
        level: cfg.mc.level,
        mle_start: cfg.mc.mle_start.clone(),
        se_variant: cfg.mc.se_variant,
        max_iter: cfg.mc.max_iter,
    };
    let rep = mc_run(sc, cfg.mc.trials, &opts).map_err(|e| AppError::Numeric(e.to_string()))?;
    let dir = out_dir(cfg);
    emit_report(&rep, &dir).map_err(|e| AppError::Data(e.to_string()))?;
    println!(
        "mc: N={} trials={} level={} seed={}",
        rep.n_individuals, rep.trials, rep.level, rep.seed
    );
    for m in &rep.methods {
        println!(
            "  {}: used {} excluded {} | coverage {}",
            m.method,
            m.trials_used,
            m.excluded,
            m.coverage.iter().map(|c| sig6(*c)).collect::<Vec<_>>().join(" ")
        );
    }
    println!("wrote report CSVs to {}", dir.display());
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<(), AppError> {
    let pc = cfg
        .predict
        .as_ref()
        .ok_or_else(|| AppError::Config("predict needs a 'predict' section".into()))?;
    let text = std::fs::read_to_string(&pc.params)
        .map_err(|e| AppError::Data(format!("{}: {e}", pc.params.display())))?;
    let fit_file: FitFile = serde_json::from_str(&text)
        .map_err(|e| AppError::Data(format!("{}: {e}", pc.params.display())))?;
    let entry = fit_file
        .fits
        .last()
        .ok_or_else(|| AppError::Data("fitted-parameter file contains no fits".into()))?;
    let theta = entry.theta.to_theta();
    let links = fit_file.links.to_spec();

    let d = cfg
        .data
        .as_ref()
        .ok_or_else(|| AppError::Config("predict needs a 'data' section".into()))?;
    let ds = read_dataset_csv(&d.path, &d.roles).map_err(|e| AppError::Data(e.to_string()))?;

    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| AppError::Data(format!("{}: {e}", dir.display())))?;
    let path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["id", "row", "y", "yhat", "vhat"])
        .map_err(|e| AppError::Data(e.to_string()))?;
    for rec in ds.records() {
        let vhat = ghme::model::posterior_mean_v(rec, &theta, &links)
            .map_err(|e| AppError::Numeric(e.to_string()))?;
        for j in 0..rec.n_obs() {
            let new_x = DVector::from_fn(rec.x.ncols(), |k, _| rec.x[(j, k)]);
            let new_z = DVector::from_fn(rec.z.ncols(), |k, _| rec.z[(j, k)]);
            let yhat = ghme::model::predict_fitted(rec, &theta, &links, &new_x, &new_z)
                .map_err(|e| AppError::Numeric(e.to_string()))?;
            w.write_record([
                rec.id.clone(),
                j.to_string(),
                rec.y[j].to_string(),
                yhat.to_string(),
                vhat.to_string(),
            ])
            .map_err(|e| AppError::Data(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| AppError::Data(e.to_string()))?;
    println!("wrote {}", path.display());

    if let Some(new_rows) = &pc.new_rows {
        let fpath = dir.join("forecasts.csv");
        forecast(new_rows, &d.roles, &ds, &theta, &links, &fpath)?;
        println!("wrote {}", fpath.display());
    }
    Ok(())
}

fn forecast(
    new_rows: &Path,
    roles: &ColumnRoles,
    ds: &LongitudinalDataset,
    theta: &Theta,
    links: &LinkSpec,
    out: &Path,
) -> Result<(), AppError> {
    let mut rdr = csv::Reader::from_path(new_rows)
        .map_err(|e| AppError::Data(format!("{}: {e}", new_rows.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| AppError::Data(e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize, AppError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AppError::Data(format!("{}: missing column '{name}'", new_rows.display())))
    };
    let id_col = col(&roles.id)?;
    let x_cols: Vec<usize> = roles.x.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let z_cols: Vec<usize> = roles.z.iter().map(|c| col(c)).collect::<Result<_, _>>()?;

    let mut w = csv::Writer::from_path(out)
        .map_err(|e| AppError::Data(format!("{}: {e}", out.display())))?;
    w.write_record(["id", "yhat"]).map_err(|e| AppError::Data(e.to_string()))?;
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AppError::Data(e.to_string()))?;
        let id = rec[id_col].to_string();
        let individual = ds
            .records()
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| AppError::Data(format!("row {}: unknown id '{id}'", row_idx + 2)))?;
        let parse = |c: usize| -> Result<f64, AppError> {
            rec[c].trim().parse().map_err(|_| {
                AppError::Data(format!(
                    "row {}: cannot parse '{}' in column '{}'",
                    row_idx + 2,
                    &rec[c],
                    headers[c].as_bytes().escape_ascii()
                ))
            })
        };
        let new_x = DVector::from_vec(
            x_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>, _>>()?,
        );
        let new_z = DVector::from_vec(
            z_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>, _>>()?,
        );
        let yhat = ghme::model::predict_fitted(individual, theta, links, &new_x, &new_z)
            .map_err(|e| AppError::Numeric(e.to_string()))?;
        w.write_record([id, yhat.to_string()]).map_err(|e| AppError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| AppError::Data(e.to_string()))?;
    Ok(())
}
