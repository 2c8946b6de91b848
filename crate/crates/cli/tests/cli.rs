use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn phasekit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasekit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().expect("error line")).expect("JSON error record")
}

#[test]
fn unknown_parameter_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = phasekit(&["orbit", "--model", "goodwin", "--set", "params.bogus=1"], &dir);
    assert!(!out.status.success());
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "unknown_parameter");
    assert_eq!(rec["error"]["module"], "model");
    assert!(!dir.exists());
}

#[test]
fn unknown_model_and_bad_config_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = phasekit(&["orbit", "--model", "lorenz"], &tmp.path().join("a"));
    assert_eq!(error_record(&out)["error"]["kind"], "unknown_model");

    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "grid = 256\nunknown_key = 1\n").unwrap();
    let out = phasekit(&["orbit", "--config", cfg.to_str().unwrap()], &tmp.path().join("b"));
    assert_eq!(error_record(&out)["error"]["module"], "config");
    assert!(!tmp.path().join("b").exists());
}

#[test]
fn orbit_output_and_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("o");
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"model": "vdp", "grid": 128, "params": {"mu": 1.5}}"#).unwrap();
    let out = phasekit(&["orbit", "--config", cfg.to_str().unwrap()], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.join("orbit.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("theta,x1,x2"));
    assert_eq!(lines.count(), 128);

    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["params"]["mu"], 1.5);
    assert_eq!(meta["config"]["grid"], 128);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["orbit"]["hyperbolic"].as_bool().unwrap());
}

#[test]
fn json_format_mirrors_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("j");
    let out = phasekit(&["sens", "--model", "radial-radius", "--format", "json", "--absolute"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t: Value = serde_json::from_str(&fs::read_to_string(dir.join("sens_summary.json")).unwrap()).unwrap();
    assert_eq!(t["columns"][0], "param");
    let row = &t["rows"][0];
    assert_eq!(row[0], "rho");
    // S_omega of the radius parameter vanishes
    assert!(row[3].as_f64().unwrap().abs() < 1e-8);
    assert!(!dir.join("sens_summary.csv").exists());
}

#[test]
fn timescale_pipeline_matches_analytic_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("p");
    let out = phasekit(&["sens", "--model", "radial-timescale", "--absolute"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(dir.join("sens_summary.csv")).unwrap();
    let row = r.records().next().unwrap().unwrap();
    let s_omega: f64 = row[3].parse().unwrap();
    let r_q: f64 = row[6].parse().unwrap();
    assert!((s_omega - 1.0).abs() < 1e-8);
    // speeding up the whole flow leaves the phase response unchanged
    assert!(r_q < 1e-8, "R_q = {r_q}");
}

#[test]
fn robust_subset_is_sorted_and_nonempty() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    let out = phasekit(&["robust", "--model", "goodwin", "--threshold", "0.1", "--jobs", "2"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(dir.join("robustness.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let chi = h.iter().position(|c| c == "norm_R_chi").unwrap();
    let kept = h.iter().position(|c| c == "retained").unwrap();
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    let values: Vec<f64> = rows.iter().map(|r| r[chi].parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
    assert!(rows.iter().any(|r| &r[kept] == "true"));
    for name in ["scatter.csv", "bars.csv", "run.json"] {
        assert!(dir.join(name).exists(), "{name}");
    }
    assert!(!dir.join("orbit.csv").exists());
}

#[test]
fn jobs_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("1");
    let four = tmp.path().join("4");
    assert!(phasekit(&["sens", "--model", "goodwin", "--jobs", "1"], &one).status.success());
    assert!(phasekit(&["sens", "--model", "goodwin", "--jobs", "4"], &four).status.success());
    for name in ["sens_summary.csv", "sens_curves.csv", "run.json"] {
        assert_eq!(fs::read(one.join(name)).unwrap(), fs::read(four.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn direct_prc_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    let out = phasekit(&["prc", "--model", "radial", "--method", "direct", "--phases", "0,1.5707963267948966"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(dir.join("prc.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().take(3).collect::<Vec<_>>(), ["theta", "eps", "dtheta"]);
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    // g = (1, 0) at the top of the circle slows the phase by eps
    let shift: f64 = rows[1][2].parse().unwrap();
    assert!((shift + 1e-3).abs() < 1e-8, "{shift}");
}

#[test]
fn default_output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_phasekit"))
        .args(["orbit", "--model", "radial"])
        .env("PHASEKIT_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let printed = String::from_utf8(out.stdout).unwrap();
    let dir = Path::new(printed.trim());
    assert!(dir.starts_with(tmp.path()));
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("orbit-radial-"));
    assert!(dir.join("orbit.csv").exists());
}

#[test]
fn non_entraining_forcing_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("e");
    let out = phasekit(&["entrain", "--model", "radial", "--eps", "0.01", "--detune", "0.1"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["entrainment"]["drifts"], true);

    let out = phasekit(&["robust", "--model", "radial", "--eps", "0.01", "--detune", "0.1"], &tmp.path().join("r"));
    assert!(!out.status.success());
    assert_eq!(error_record(&out)["error"]["kind"], "precondition");
}
