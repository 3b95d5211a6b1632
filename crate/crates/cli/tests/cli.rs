use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blochhom"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn laminate() -> Value {
    json!({"version": 1, "dim": 1, "kind": "laminate", "n_per_axis": 129,
           "payload": {"values": [1.0, 4.0], "fraction": 0.5}})
}

fn identity_1d() -> Value {
    json!({"dim": 1, "kind": "constant", "n_per_axis": 3, "payload": {"matrix": [[1.0]]}})
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(scenario: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(scenario)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bands_on_identity_reproduce_the_symbol() {
    let tmp = TempDir::new().unwrap();
    let rho = 0.7;
    let cfg = json!({
        "version": 1, "coefficient": identity_1d(), "numerics": {"N": 4},
        "scenario": "bands", "scenario_params": {"rho": rho, "eta_points": 9, "modes": 1}
    });
    let out = tmp.path().join("out");
    let o = run("bands", &write_config(tmp.path(), &cfg), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut rdr = csv::Reader::from_path(out.join("bands.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["eta_1", "m", "lambda", "gauge_residual"]);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let eta: f64 = rec[0].parse().unwrap();
        let lambda: f64 = rec[2].parse().unwrap();
        let exact = eta * eta + rho * rho * eta.powi(4);
        assert!((lambda - exact).abs() < 1e-12, "eta {eta}: {lambda} vs {exact}");
        rows += 1;
    }
    assert_eq!(rows, 9);
}

#[test]
fn manifest_records_config_and_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "version": 1, "coefficient": laminate(), "numerics": {"N": 8},
        "scenario": "cell", "scenario_params": {"rho": 1.0}, "seed": 3
    });
    let out = tmp.path().join("cell");
    let o = run("cell", &write_config(tmp.path(), &cfg), &out, &["--seed", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["tool"], "blochhom-cli");
    assert_eq!(m["scenario"], "cell");
    assert_eq!(m["config"]["seed"], 11);
    assert_eq!(m["config"]["output_dir"], out.to_str().unwrap());
    assert_eq!(m["outputs"], json!(["correctors.csv", "cell.json"]));
    assert!(m["generated_at"].as_u64().unwrap() > 0);
    let cell = read_json(&out.join("cell.json"));
    assert!(cell["weak_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "version": 1, "coefficient": laminate(), "numerics": {"N": 8},
        "scenario": "supercell",
        "scenario_params": {"regime": "theta", "theta": 1.0, "epsilons": [0.5, 0.25]},
        "seed": 5
    });
    let path = write_config(tmp.path(), &cfg);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = run("supercell", &path, dir, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["convergence.csv", "supercell.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
}

fn assert_config_error(cfg: &Value, scenario: &str) {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("never");
    let o = run(scenario, &write_config(tmp.path(), cfg), &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists(), "config errors must not create the output directory");
}

#[test]
fn malformed_json_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, "{\"version\": 1, \"numerics\": ").unwrap();
    let out = tmp.path().join("never");
    let o = run("bands", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_config_file_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let o = run("bands", &tmp.path().join("absent.json"), &tmp.path().join("never"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_fields_are_rejected() {
    let base = json!({
        "version": 1, "coefficient": laminate(), "numerics": {"N": 8},
        "scenario": "bands", "scenario_params": {}
    });
    let mut top = base.clone();
    top["colour"] = json!("blue");
    assert_config_error(&top, "bands");
    let mut params = base.clone();
    params["scenario_params"] = json!({"rh0": 1.0});
    assert_config_error(&params, "bands");
    let mut tol = base;
    tol["numerics"]["tolerances"] = json!({"hermitan": 1e-3});
    assert_config_error(&tol, "bands");
}

#[test]
fn invalid_values_are_rejected_before_any_output() {
    let cfg = |scenario: &str, numerics: Value, params: Value| {
        json!({"version": 1, "coefficient": laminate(), "numerics": numerics,
               "scenario": scenario, "scenario_params": params})
    };
    assert_config_error(&cfg("bands", json!({"N": 0}), json!({})), "bands");
    assert_config_error(&cfg("bands", json!({"N": 8}), json!({"rho": -1.0})), "bands");
    assert_config_error(&cfg("supercell", json!({"N": 8}), json!({"regime": "theta"})), "supercell");
    assert_config_error(
        &cfg("supercell", json!({"N": 8}), json!({"regime": "zero", "epsilons": [0.25]})),
        "supercell",
    );
    // κ = ε^{1/2} does not give ρ → 0.
    assert_config_error(
        &cfg("supercell", json!({"N": 8}), json!({"regime": "zero", "kappa": "sqrt_eps"})),
        "supercell",
    );
    let mut version = cfg("bands", json!({"N": 8}), json!({}));
    version["version"] = json!(2);
    assert_config_error(&version, "bands");
    let mut coeff = cfg("bands", json!({"N": 8}), json!({}));
    coeff["coefficient"]["payload"]["values"] = json!([1.0, -4.0]);
    assert_config_error(&coeff, "bands");
}

#[test]
fn scenario_must_match_the_config() {
    let cfg = json!({
        "version": 1, "coefficient": laminate(), "numerics": {"N": 8},
        "scenario": "bands", "scenario_params": {}
    });
    assert_config_error(&cfg, "tensor");
}

#[test]
fn compute_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    // Three plane waves cannot carry ten bands.
    let cfg = json!({
        "version": 1, "coefficient": identity_1d(), "numerics": {"N": 1},
        "scenario": "bands", "scenario_params": {"modes": 10}
    });
    let o = run("bands", &write_config(tmp.path(), &cfg), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_all_passes_on_the_shipped_laminate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("verify");
    let o = run("verify-all", &configs_dir().join("verify-all.json"), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("verify.json"));
    assert_eq!(report["passed"], true);
    assert!(report["failure"].is_null());
    let checks = report["checks"].as_array().unwrap();
    for module in ["fiber", "spectra", "cell", "tensor", "derivs", "supercell"] {
        assert!(checks.iter().any(|c| c["module"] == module), "no {module} checks");
    }
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn verify_all_reports_the_first_breach() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "version": 1, "coefficient": laminate(),
        "numerics": {"N": 16, "tolerances": {"hermitian": -1.0}},
        "scenario": "verify-all", "scenario_params": {"rho_list": [1.0], "garding_trials": 10}
    });
    let out = tmp.path().join("verify");
    let o = run("verify-all", &write_config(tmp.path(), &cfg), &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let report = read_json(&out.join("verify.json"));
    assert_eq!(report["passed"], false);
    assert_eq!(report["failure"]["module"], "fiber");
    assert_eq!(report["checks"].as_array().unwrap().len(), 1);
}

#[test]
fn every_shipped_config_parses_and_validates() {
    let tmp = TempDir::new().unwrap();
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = read_json(&path);
        let scenario = cfg["scenario"].as_str().unwrap().to_string();
        // Mismatching the scenario on purpose: validation stops at the
        // scenario check, after parsing, so this exercises the schema only.
        let other = if scenario == "bands" { "cell" } else { "bands" };
        let o = run(other, &path, &tmp.path().join("x"), &[]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2));
        assert!(err.contains("config declares"), "{}: {err}", path.display());
    }
}
