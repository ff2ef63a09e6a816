use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn htsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htsr")).args(args).output().expect("spawn htsr")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = htsr(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth_spectrum(dir: &Path, name: &str, spec: &str, seed: u64) -> PathBuf {
    let p = dir.join(name);
    ok(&["synth", "--kind", "spectrum", "--spec", spec, "--seed", &seed.to_string(), "--out", p.to_str().unwrap()]);
    p
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid json")
}

#[test]
fn analyze_is_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let m = path(dir.path(), "w.csv");
    ok(&["synth", "--kind", "matrix", "--spec", r#"{"family":"mp_plus_tail","n_rows":80,"n_cols":40,"sigma":1.0,"n_spikes":4,"tail_alpha":2.5}"#, "--rows", "80", "--out", &m]);
    let init = path(dir.path(), "w0.csv");
    ok(&["synth", "--kind", "matrix", "--spec", r#"{"family":"mp_bulk","n_rows":80,"n_cols":40,"sigma":1.0}"#, "--rows", "80", "--seed", "5", "--out", &init]);
    let args = ["analyze", "--checkpoint", &m, "--init", &init, "--seed", "3"];
    let a = ok(&args);
    let b = ok(&args);
    assert_eq!(a, b);
    let mut with_jobs = args.to_vec();
    with_jobs.extend(["--jobs", "2"]);
    assert_eq!(a, ok(&with_jobs));
    let v = json(&a);
    assert_eq!(v["header"]["schema_version"], 1);
    assert_eq!(v["header"]["seed"], 3);
}

#[test]
fn missing_checkpoint_exits_nonzero_with_stderr() {
    let out = htsr(&["analyze", "--checkpoint", "/nonexistent/w.safetensors"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("file_not_found"), "{err}");
}

#[test]
fn usage_and_config_errors() {
    assert_eq!(htsr(&["analyze", "--checkpoint"]).status.code(), Some(2));
    assert_eq!(htsr(&["fit", "--fit", "pl"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"checkpoints": ["a.csv"], "colour": 1}"#).unwrap();
    let out = htsr(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn single_csv_matrix_shape_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let m = path(dir.path(), "w.csv");
    ok(&["synth", "--kind", "matrix", "--spec", r#"{"family":"mp_bulk","n_rows":60,"n_cols":30,"sigma":1.0}"#, "--rows", "60", "--out", &m]);
    let v = json(&ok(&["analyze", "--checkpoint", &m, "--metrics", "shape"]));
    let report = &v["reports"][0];
    assert_eq!(report["layers"].as_array().unwrap().len(), 1);
    let agg = report["aggregated"].as_array().unwrap();
    assert_eq!(agg.len(), 6);
    for name in ["PL_alpha", "E_TPL_beta", "E_TPL_lambda", "EXP_lambda", "PL_ks_distance", "E_TPL_ks_distance"] {
        assert!(agg.iter().any(|e| e["metric"] == name), "{name}");
    }
}

#[test]
fn analyze_config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let m = path(dir.path(), "w.csv");
    ok(&["synth", "--kind", "matrix", "--spec", r#"{"family":"mp_bulk","n_rows":30,"n_cols":20,"sigma":1.0}"#, "--rows", "30", "--out", &m]);
    let from_flags = json(&ok(&["analyze", "--checkpoint", &m, "--metrics", "param_norm,stable_rank"]));
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, serde_json::to_vec(&from_flags["header"]["config"]).unwrap()).unwrap();
    let from_file = json(&ok(&["analyze", "--config", cfg.to_str().unwrap()]));
    assert_eq!(from_flags, from_file);
}

fn best(eig: &Path) -> Value {
    let v = json(&ok(&["fit", "--eigenvalues", eig.to_str().unwrap()]));
    v["layers"][0]["best_by_ks"].clone()
}

#[test]
fn fit_picks_the_planted_family() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [1, 2, 3] {
        let p = synth_spectrum(dir.path(), "p.csv", r#"{"family":"pareto","alpha":3.0,"x_min":1.0,"x_max":null,"n":500}"#, seed);
        assert_eq!(best(&p), "PL", "pareto seed {seed}");
        let e = synth_spectrum(dir.path(), "e.csv", r#"{"family":"trunc_exp","lambda":0.5,"x_min":1.0,"x_max":50.0,"n":500}"#, seed);
        assert_eq!(best(&e), "EXP", "trunc-exp seed {seed}");
    }
}

#[test]
fn fit_degenerate_input_gives_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("flat.csv");
    std::fs::write(&p, "2\n2\n2\n2\n2\n2\n2\n2\n2\n2\n").unwrap();
    let out = htsr(&["fit", "--eigenvalues", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out.stdout);
    let layer = &v["layers"][0];
    let failures = layer["failures"].as_array().unwrap();
    assert!(!failures.is_empty());
    for f in failures {
        assert!(f["kind"].is_string() && f["message"].is_string());
    }
}

#[test]
fn plot_data_has_histograms_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth_spectrum(dir.path(), "p.csv", r#"{"family":"pareto","alpha":2.5,"x_min":1.0,"x_max":null,"n":400}"#, 4);
    let v = json(&ok(&["plot-data", "--eigenvalues", p.to_str().unwrap(), "--bins", "30", "--curve-points", "50"]));
    assert_eq!(v["header"]["command"], "plot-data");
    let plot = &v["layers"][0]["plot"];
    assert_eq!(plot["histogram_log"].as_array().unwrap().len(), 30);
    let total: u64 = plot["histogram_log"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 400);
    for c in plot["curves"].as_array().unwrap() {
        let x = c["x"].as_array().unwrap();
        assert_eq!(x.len(), 50);
        let (a, b) = (x[0].as_f64().unwrap(), x[1].as_f64().unwrap());
        let (y, z) = (x[48].as_f64().unwrap(), x[49].as_f64().unwrap());
        assert!(((b / a) - (z / y)).abs() < 1e-9, "grid is log-spaced");
    }
}

#[test]
fn correlate_writes_results_summary_and_selection() {
    let dir = tempfile::tempdir().unwrap();
    let series = path(dir.path(), "series.csv");
    ok(&["synth", "--kind", "manifest", "--preset", "series", "--hits", "1,1,0,1,0,1,1,1", "--out", &series]);
    let out = dir.path().join("out");
    ok(&["correlate", "--manifest", &series, "--task", "global,selection", "--series-axis", "series", "--out", out.to_str().unwrap()]);
    let sel = std::fs::read_to_string(out.join("selection.csv")).unwrap();
    let row = sel.lines().find(|l| l.starts_with("planted,")).unwrap();
    assert_eq!(row, "planted,0.75,6,8,0");
    let jsonl = std::fs::read_to_string(out.join("correlations.jsonl")).unwrap();
    let first: Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(first["header"]["command"], "correlate");
    assert!(std::fs::read_to_string(out.join("summary.csv")).unwrap().starts_with("# {"));
}

#[test]
fn correlate_stdout_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = path(dir.path(), "grid.csv");
    ok(&["synth", "--kind", "manifest", "--preset", "grid", "--out", &grid]);
    let text = String::from_utf8(ok(&["correlate", "--manifest", &grid, "--task", "two", "--axis", "lr", "--method", "kendall"])).unwrap();
    let rows: Vec<Value> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r["rho"] == 1.0 && r["scope"]["axis"] == "lr" && r["n"] == 8));
}

#[test]
fn family_and_probe_feed_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fam.json");
    std::fs::write(&cfg, r#"{"kind":"family","family":{"n_models":3,"n_rows":40,"n_cols":20,"n_spikes":3}}"#).unwrap();
    let fam = dir.path().join("fam");
    ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", fam.to_str().unwrap()]);
    let probe = dir.path().join("probe");
    ok(&["synth", "--kind", "probe", "--out", probe.to_str().unwrap()]);
    let v = json(&ok(&[
        "analyze",
        "--checkpoint",
        &path(&fam, "model02.safetensors"),
        "--metrics",
        "all",
        "--probe",
        &path(&probe, "probe.safetensors"),
        "--probe-data",
        &path(&probe, "data.csv"),
        "--probe-init",
        &path(&probe, "init.safetensors"),
        "--m",
        "150",
    ]));
    let agg = v["reports"][0]["aggregated"].as_array().unwrap();
    assert_eq!(agg.len(), 28);
    let get = |n: &str| agg.iter().find(|e| e["metric"] == n).unwrap()["value"].clone();
    assert!(get("path_norm").is_number());
    assert!(get("pacbayes_flatness").is_number());
    let manifest = std::fs::read_to_string(fam.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 4);
}
