//! Monte Carlo report structure and its CSV round trip.
//!
//! Layout in the output directory:
//!   run.csv          key,value metadata (N, trials, level, seed, params, methods)
//!   coverage.csv     method,param,coverage,rmse,trials_used,excluded
//!   standardized.csv method,trial,<one column per parameter>
//!   chisq.csv        method,trial,chisq
//!   timing.csv       method,wall_q50_seconds,wall_q90_seconds
//!
//! All statistical content is bit-deterministic given (scenario, trials,
//! seed); wall-clock timing lives only in timing.csv.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::estimate::FitMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: FitMethod,
    pub trials_used: usize,
    pub excluded: usize,
    pub used_trial_indices: Vec<usize>,
    pub coverage: Vec<f64>,
    pub rmse: Vec<f64>,
    /// One row per used trial: the Studentized estimate A~_N (theta_hat - theta_0).
    pub standardized: Vec<Vec<f64>>,
    pub chisq: Vec<f64>,
    pub wall_q50: f64,
    pub wall_q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_individuals: usize,
    pub trials: usize,
    pub level: f64,
    pub seed: u64,
    pub param_names: Vec<String>,
    pub methods: Vec<MethodReport>,
}

impl McReport {
    /// Copy with timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> McReport {
        let mut out = self.clone();
        for m in &mut out.methods {
            m.wall_q50 = 0.0;
            m.wall_q90 = 0.0;
        }
        out
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::BadReport { path: path.display().to_string(), reason: e.to_string() }
}

pub fn emit_report(rep: &McReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let run_path = dir.join("run.csv");
    {
        let mut w = csv::Writer::from_path(&run_path).map_err(csv_err(&run_path))?;
        w.write_record(["key", "value"]).map_err(csv_err(&run_path))?;
        let method_names: Vec<String> =
            rep.methods.iter().map(|m| m.method.to_string()).collect();
        for (k, v) in [
            ("n_individuals", rep.n_individuals.to_string()),
            ("trials", rep.trials.to_string()),
            ("level", rep.level.to_string()),
            ("seed", rep.seed.to_string()),
            ("params", rep.param_names.join(";")),
            ("methods", method_names.join(";")),
        ] {
            w.write_record([k, &v]).map_err(csv_err(&run_path))?;
        }
        w.flush().map_err(io_err(&run_path))?;
    }

    let cov_path = dir.join("coverage.csv");
    {
        let mut w = csv::Writer::from_path(&cov_path).map_err(csv_err(&cov_path))?;
        w.write_record(["method", "param", "coverage", "rmse", "trials_used", "excluded"])
            .map_err(csv_err(&cov_path))?;
        for m in &rep.methods {
            for (k, name) in rep.param_names.iter().enumerate() {
                w.write_record([
                    m.method.to_string(),
                    name.clone(),
                    m.coverage[k].to_string(),
                    m.rmse[k].to_string(),
                    m.trials_used.to_string(),
                    m.excluded.to_string(),
                ])
                .map_err(csv_err(&cov_path))?;
            }
        }
        w.flush().map_err(io_err(&cov_path))?;
    }

    let std_path = dir.join("standardized.csv");
    {
        let mut w = csv::Writer::from_path(&std_path).map_err(csv_err(&std_path))?;
        let mut header = vec!["method".to_string(), "trial".to_string()];
        header.extend(rep.param_names.iter().cloned());
        w.write_record(&header).map_err(csv_err(&std_path))?;
        for m in &rep.methods {
            for (row, &t) in m.standardized.iter().zip(&m.used_trial_indices) {
                let mut rec = vec![m.method.to_string(), t.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(csv_err(&std_path))?;
            }
        }
        w.flush().map_err(io_err(&std_path))?;
    }

    let chisq_path = dir.join("chisq.csv");
    {
        let mut w = csv::Writer::from_path(&chisq_path).map_err(csv_err(&chisq_path))?;
        w.write_record(["method", "trial", "chisq"]).map_err(csv_err(&chisq_path))?;
        for m in &rep.methods {
            for (&x, &t) in m.chisq.iter().zip(&m.used_trial_indices) {
                w.write_record([m.method.to_string(), t.to_string(), x.to_string()])
                    .map_err(csv_err(&chisq_path))?;
            }
        }
        w.flush().map_err(io_err(&chisq_path))?;
    }

    let timing_path = dir.join("timing.csv");
    {
        let mut w = csv::Writer::from_path(&timing_path).map_err(csv_err(&timing_path))?;
        w.write_record(["method", "wall_q50_seconds", "wall_q90_seconds"])
            .map_err(csv_err(&timing_path))?;
        for m in &rep.methods {
            w.write_record([m.method.to_string(), m.wall_q50.to_string(), m.wall_q90.to_string()])
                .map_err(csv_err(&timing_path))?;
        }
        w.flush().map_err(io_err(&timing_path))?;
    }
    Ok(())
}

fn parse_method(s: &str, path: &Path) -> Result<FitMethod, HarnessError> {
    match s {
        "initial" => Ok(FitMethod::Initial),
        "one_step" => Ok(FitMethod::OneStep),
        "mle" => Ok(FitMethod::Mle),
        other => Err(HarnessError::BadReport {
            path: path.display().to_string(),
            reason: format!("unknown method {other}"),
        }),
    }
}

fn parse_f64(s: &str, path: &Path) -> Result<f64, HarnessError> {
    s.parse().map_err(|_| HarnessError::BadReport {
        path: path.display().to_string(),
        reason: format!("bad float {s}"),
    })
}

fn parse_usize(s: &str, path: &Path) -> Result<usize, HarnessError> {
    s.parse().map_err(|_| HarnessError::BadReport {
        path: path.display().to_string(),
        reason: format!("bad integer {s}"),
    })
}

/// Rebuild an [`McReport`] from an emitted directory.
pub fn read_report(dir: &Path) -> Result<McReport, HarnessError> {
    let run_path = dir.join("run.csv");
    let mut kv = std::collections::BTreeMap::new();
    let mut rdr = csv::Reader::from_path(&run_path).map_err(csv_err(&run_path))?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&run_path))?;
        kv.insert(rec[0].to_string(), rec[1].to_string());
    }
    let get = |k: &str| -> Result<String, HarnessError> {
        kv.get(k).cloned().ok_or_else(|| HarnessError::BadReport {
            path: run_path.display().to_string(),
            reason: format!("missing key {k}"),
        })
    };
    let param_names: Vec<String> = {
        let s = get("params")?;
        if s.is_empty() { Vec::new() } else { s.split(';').map(String::from).collect() }
    };
    let method_names: Vec<String> = {
        let s = get("methods")?;
        if s.is_empty() { Vec::new() } else { s.split(';').map(String::from).collect() }
    };
    let p = param_names.len();

    let mut methods: Vec<MethodReport> = Vec::new();
    for name in &method_names {
        methods.push(MethodReport {
            method: parse_method(name, &run_path)?,
            trials_used: 0,
            excluded: 0,
            used_trial_indices: Vec::new(),
            coverage: vec![f64::NAN; p],
            rmse: vec![f64::NAN; p],
            standardized: Vec::new(),
            chisq: Vec::new(),
            wall_q50: 0.0,
            wall_q90: 0.0,
        });
    }
    let idx_of = |m: FitMethod, methods: &[MethodReport]| {
        methods.iter().position(|r| r.method == m).expect("method listed in run.csv")
    };

    let cov_path = dir.join("coverage.csv");
    let mut rdr = csv::Reader::from_path(&cov_path).map_err(csv_err(&cov_path))?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&cov_path))?;
        let m = parse_method(&rec[0], &cov_path)?;
        let k = param_names.iter().position(|n| n == &rec[1]).ok_or_else(|| {
            HarnessError::BadReport {
                path: cov_path.display().to_string(),
                reason: format!("unknown param {}", &rec[1]),
            }
        })?;
        let mi = idx_of(m, &methods);
        methods[mi].coverage[k] = parse_f64(&rec[2], &cov_path)?;
        methods[mi].rmse[k] = parse_f64(&rec[3], &cov_path)?;
        methods[mi].trials_used = parse_usize(&rec[4], &cov_path)?;
        methods[mi].excluded = parse_usize(&rec[5], &cov_path)?;
    }

    let std_path = dir.join("standardized.csv");
    let mut rdr = csv::Reader::from_path(&std_path).map_err(csv_err(&std_path))?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&std_path))?;
        let m = parse_method(&rec[0], &std_path)?;
        let t = parse_usize(&rec[1], &std_path)?;
        let row: Result<Vec<f64>, _> = (2..rec.len()).map(|i| parse_f64(&rec[i], &std_path)).collect();
        let mi = idx_of(m, &methods);
        methods[mi].used_trial_indices.push(t);
        methods[mi].standardized.push(row?);
    }

    let chisq_path = dir.join("chisq.csv");
    let mut rdr = csv::Reader::from_path(&chisq_path).map_err(csv_err(&chisq_path))?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&chisq_path))?;
        let m = parse_method(&rec[0], &chisq_path)?;
        let mi = idx_of(m, &methods);
        let x = parse_f64(&rec[2], &chisq_path)?;
        methods[mi].chisq.push(x);
    }

    let timing_path = dir.join("timing.csv");
    let mut rdr = csv::Reader::from_path(&timing_path).map_err(csv_err(&timing_path))?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&timing_path))?;
        let m = parse_method(&rec[0], &timing_path)?;
        let mi = idx_of(m, &methods);
        methods[mi].wall_q50 = parse_f64(&rec[1], &timing_path)?;
        methods[mi].wall_q90 = parse_f64(&rec[2], &timing_path)?;
    }

    Ok(McReport {
        n_individuals: parse_usize(&get("n_individuals")?, &run_path)?,
        trials: parse_usize(&get("trials")?, &run_path)?,
        level: parse_f64(&get("level")?, &run_path)?,
        seed: get("seed")?.parse().map_err(|_| HarnessError::BadReport {
            path: run_path.display().to_string(),
            reason: "bad seed".into(),
        })?,
        param_names,
        methods,
    })
}
