//! End-to-end runs of the `ghme` binary: exit codes, determinism, file
//! layouts, and the fit -> predict round trip.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ghme"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ghme_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn small_scenario_json(seed: u64, n: usize, n_obs: usize) -> String {
    format!(
        r#"{{
  "scenario": {{
    "n_individuals": {n},
    "n_schedule": {{ "fixed": {n_obs} }},
    "covariates": "iid_gauss",
    "links": {{ "s": "tanh_linear", "sigma2": "exp_linear" }},
    "theta_true": {{
      "beta": [3.0, 5.0], "alpha": [-4.0, 5.0], "tau": [0.05, 0.07],
      "lambda": -0.5, "delta": 1.5, "gamma": 0.7
    }},
    "family": {{ "fixed_lambda": -0.5 }},
    "seed": {seed}
  }}
}}"#
    )
}

#[test]
fn missing_config_is_exit_2() {
    let out = bin().arg("simulate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config"), "{err}");
}

#[test]
fn unknown_preset_is_exit_2() {
    let out = bin().args(["simulate", "--preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_schema_violation_is_exit_2_with_location() {
    let dir = tmpdir("schema");
    let cfg = dir.join("bad.json");
    write(&cfg, r#"{ "scenario": { "n_individuals": "many" } }"#);
    let out = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("column"), "{err}");
}

#[test]
fn missing_data_file_is_exit_3() {
    let dir = tmpdir("nodata");
    let cfg = dir.join("c.json");
    write(
        &cfg,
        r#"{
  "data": {
    "path": "/nonexistent/never.csv",
    "roles": { "id": "id", "y": "y", "x": ["x0"], "z": ["z0"], "w": ["w0"] },
    "family": { "fixed_lambda": -0.5 }
  }
}"#,
    );
    let out = bin().args(["fit", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_is_byte_deterministic_and_shaped() {
    let dir = tmpdir("simdet");
    let cfg = dir.join("c.json");
    write(&cfg, &small_scenario_json(77, 12, 4));
    let out1 = dir.join("a");
    let out2 = dir.join("b");
    for out in [&out1, &out2] {
        let st = bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(st.success());
    }
    let a = std::fs::read(out1.join("dataset.csv")).unwrap();
    let b = std::fs::read(out2.join("dataset.csv")).unwrap();
    assert_eq!(a, b, "same seed must give identical bytes");
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 12 * 4);
    assert!(text.lines().next().unwrap().starts_with("id,y,x0,x1,z0,z1,w0,w1"));
    // latent file has one row per individual
    let latent = std::fs::read_to_string(out1.join("latent.csv")).unwrap();
    assert_eq!(latent.lines().count(), 1 + 12);
}

#[test]
fn simulate_with_schedule_list() {
    let dir = tmpdir("simlist");
    let cfg = dir.join("c.json");
    let json = small_scenario_json(5, 3, 1)
        .replace(r#""n_schedule": { "fixed": 1 }"#, r#""n_schedule": { "list": [3, 5, 2] }"#);
    write(&cfg, &json);
    let st = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&dir).status().unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(dir.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 10);
}

#[test]
fn fit_on_simulated_data_writes_report() {
    let dir = tmpdir("fitsim");
    let cfg = dir.join("c.json");
    let mut json: serde_json::Value =
        serde_json::from_str(&small_scenario_json(91, 150, 6)).unwrap();
    json["fit"] = serde_json::json!({ "methods": ["initial", "one_step"] });
    write(&cfg, &serde_json::to_string(&json).unwrap());
    let out = bin()
        .args(["fit", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("== initial"), "{stdout}");
    assert!(stdout.contains("== one_step"));
    assert!(stdout.contains("se "), "one-step should carry standard errors: {stdout}");
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["fits"].as_array().unwrap().len(), 2);
    // full precision survives the JSON round trip
    let b0 = fit["fits"][1]["theta"]["beta"][0].as_f64().unwrap();
    assert!((b0 - 3.0).abs() < 0.2);
}

#[test]
fn riesby_shaped_fixture_gives_nine_parameters() {
    // synthetic data with the depression-study column layout:
    // x = (intercept, week, edog), z = (intercept, edog), w = (intercept, week)
    let dir = tmpdir("riesby");
    let data = dir.join("riesby_like.csv");
    let mut rows = vec!["id,hamd,intercept,week,edog".to_string()];
    let mut state = 0x9E3779B97F4A7C15u64;
    let mut unif = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..80 {
        let edog = if unif() < 0.5 { 0.0 } else { 1.0 };
        let vi = (0.8 + 2.0 * unif()).max(0.1);
        for week in 0..6 {
            let s = (0.5 + 0.3 * edog_f(edog)).tanh();
            let mean = 18.0 - 2.0 * week as f64 - 1.0 * edog + s * vi;
            let noise = (unif() - 0.5) * 2.0 * (vi).sqrt();
            rows.push(format!("p{i},{:.6},1,{week},{edog}", mean + noise));
        }
    }
    write(&data, &(rows.join("\n") + "\n"));
    let cfg = dir.join("c.json");
    write(
        &cfg,
        &format!(
            r#"{{
  "data": {{
    "path": "{}",
    "roles": {{
      "id": "id", "y": "hamd",
      "x": ["intercept", "week", "edog"],
      "z": ["intercept", "edog"],
      "w": ["intercept", "week"]
    }},
    "links": {{ "s": "tanh_linear", "sigma2": "exp_linear" }},
    "family": {{ "fixed_lambda": -0.5 }}
  }},
  "fit": {{ "methods": ["initial", "one_step"] }}
}}"#,
            data.display()
        ),
    );
    let out = bin().args(["fit", "--config"]).arg(&cfg).arg("--out").arg(&dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
    let one_step = &fit["fits"][1];
    // 3 beta + 2 alpha + 2 tau + delta + gamma = 9 parameters
    let p = one_step["theta"]["beta"].as_array().unwrap().len()
        + one_step["theta"]["alpha"].as_array().unwrap().len()
        + one_step["theta"]["tau"].as_array().unwrap().len()
        + 2;
    assert_eq!(p, 9);
    // the synthetic layout is deliberately collinear (s in the span of x),
    // so intervals may be unavailable; when present they match the shape
    if let Some(se) = one_step["se"].as_array() {
        assert_eq!(se.len(), 9);
    }
}

fn edog_f(e: f64) -> f64 {
    e
}

#[test]
fn mc_smoke_run_emits_csvs_and_succeeds_with_exclusions() {
    let dir = tmpdir("mc");
    let cfg = dir.join("c.json");
    let mut json: serde_json::Value =
        serde_json::from_str(&small_scenario_json(13, 120, 6)).unwrap();
    json["mc"] = serde_json::json!({ "trials": 3, "methods": ["initial", "one_step"] });
    write(&cfg, &serde_json::to_string(&json).unwrap());
    let out = bin().args(["mc", "--config"]).arg(&cfg).arg("--out").arg(&dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run.csv", "coverage.csv", "standardized.csv", "chisq.csv", "timing.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    // 8 parameter columns for the fixed-lambda family
    let cov = std::fs::read_to_string(dir.join("coverage.csv")).unwrap();
    let params: std::collections::BTreeSet<&str> = cov
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(params.len(), 8, "{params:?}");
}

#[test]
fn predict_round_trip_and_unknown_id() {
    let dir = tmpdir("predict");
    // simulate a dataset
    let sim_cfg = dir.join("sim.json");
    write(&sim_cfg, &small_scenario_json(31, 60, 5));
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&sim_cfg)
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap()
        .success());
    // fit it from the CSV
    let data_json = format!(
        r#""data": {{
    "path": "{}",
    "roles": {{ "id": "id", "y": "y", "x": ["x0","x1"], "z": ["z0","z1"], "w": ["w0","w1"] }},
    "links": {{ "s": "tanh_linear", "sigma2": "exp_linear" }},
    "family": {{ "fixed_lambda": -0.5 }}
  }}"#,
        dir.join("dataset.csv").display()
    );
    let fit_cfg = dir.join("fit.json.cfg");
    write(
        &fit_cfg,
        &format!(r#"{{ {data_json}, "fit": {{ "methods": ["initial", "one_step"] }} }}"#),
    );
    assert!(bin()
        .args(["fit", "--config"])
        .arg(&fit_cfg)
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap()
        .success());
    // predict with a forecast row
    let rows = dir.join("new_rows.csv");
    write(&rows, "id,x0,x1,z0,z1\nid00003,0.5,-0.2,0.1,0.4\n");
    let pred_cfg = dir.join("pred.json");
    write(
        &pred_cfg,
        &format!(
            r#"{{ {data_json}, "predict": {{ "params": "{}", "new_rows": "{}" }} }}"#,
            dir.join("fit.json").display(),
            rows.display()
        ),
    );
    let out =
        bin().args(["predict", "--config"]).arg(&pred_cfg).arg("--out").arg(&dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = std::fs::read_to_string(dir.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 60 * 5);
    assert!(preds.lines().next().unwrap().starts_with("id,row,y,yhat,vhat"));
    let forecasts = std::fs::read_to_string(dir.join("forecasts.csv")).unwrap();
    assert_eq!(forecasts.lines().count(), 2);

    // unknown id in the forecast rows is a data error (exit 3)
    write(&rows, "id,x0,x1,z0,z1\nghost,0.5,-0.2,0.1,0.4\n");
    let out =
        bin().args(["predict", "--config"]).arg(&pred_cfg).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn preset_listing_rejects_config_conflict() {
    let dir = tmpdir("conflict");
    let cfg = dir.join("c.json");
    write(&cfg, &small_scenario_json(1, 5, 2));
    let out = bin()
        .args(["simulate", "--preset", "scenario-i", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
