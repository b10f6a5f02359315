use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const REFERENCE: [&str; 4] = ["--p", "1.2", "--delta", "0.02"];

fn staircase(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_staircase"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("staircase binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn constants_report_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = staircase(dir.path(), &[&REFERENCE[..], &["constants"]].concat());
    assert_eq!(out.status.code(), Some(0));
    let c = json(&dir.path().join("constants.json"));
    assert_eq!(c["profile"]["Lambda"], 4.0);
    assert!((c["p_crit"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-15);
    for key in [
        "r",
        "I0",
        "I1",
        "T0",
        "I",
        "N",
        "Crp",
        "Ctilde",
        "envelope_c",
    ] {
        assert!(c[key].is_number(), "missing {key}");
    }
    let m = &c["margins"];
    for v in [
        &m["bracket"]["lower_margin"],
        &m["bracket"]["upper_margin"],
        &m["interp_bracket"]["lower_margin"],
        &m["interp_bracket"]["upper_margin"],
        &m["i_bound"],
        &m["n_bound"],
        &m["easy"],
    ] {
        assert!(v.as_f64().unwrap() > 0.0, "{m}");
    }
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, c);
}

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = staircase(
        dir.path(),
        &[&REFERENCE[..], &["-L", "12", "simulate"]].concat(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("stages.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("stage,band_j,Q_mass,Q_lower,Q_upper,V_mass,V_lower,V_upper,S1,Sp,S2,energy,max_kf_residual")
    );
    // Stage 0 has one row, stage l has l bands.
    assert_eq!(lines.count(), 1 + (1..=12).sum::<usize>());
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["violations"], 0);
    assert_eq!(s["energy_increasing"], true);
    assert_eq!(s["energy"].as_array().unwrap().len(), 13);
    assert!(s["Sp_max"].as_f64().unwrap().is_finite());
}

#[test]
fn realize_cross_checks_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = staircase(dir.path(), &[&REFERENCE[..], &["realize"]].concat());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(&dir.path().join("realize.json"));
    assert_eq!(r["ok"], true);
    assert!(r["max_histogram_error"].as_f64().unwrap() <= r["eta"].as_f64().unwrap());
    let mesh = json(&dir.path().join("mesh.json"));
    let nv = mesh["vertices"].as_array().unwrap().len() as u64;
    let cells = mesh["cells"].as_array().unwrap();
    assert_eq!(cells.len() as u64, r["checks"]["cells"].as_u64().unwrap());
    assert!(cells.iter().all(|c| {
        c["G"].as_array().unwrap().len() == 4
            && c["c"].as_array().unwrap().len() == 2
            && c["verts"]
                .as_array()
                .unwrap()
                .iter()
                .all(|v| v.as_u64().unwrap() < nv)
    }));
    assert_eq!(mesh["boundary"]["G0"].as_array().unwrap().len(), 4);

    let lam = dir.path().join("laminate.json");
    let ok = staircase(dir.path(), &["verify", "--laminate", lam.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));

    let mut bad = json(&lam);
    bad["atoms"][0]["weight"] = Value::from(0.5);
    let bad_path = dir.path().join("bad.json");
    std::fs::write(&bad_path, bad.to_string()).unwrap();
    let rejected = staircase(
        dir.path(),
        &["verify", "--laminate", bad_path.to_str().unwrap()],
    );
    assert_eq!(rejected.status.code(), Some(1));
}

#[test]
fn verify_reports_schedule_margins() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        &REFERENCE[..],
        &["--precision", "extended", "--ell-max", "20", "verify"],
    ]
    .concat();
    assert_eq!(staircase(dir.path(), &args).status.code(), Some(0));
    let v = json(&dir.path().join("verify.json"));
    assert_eq!(v["precision"], "extended");
    assert_eq!(v["ell_max"], 20);
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--p", "1.5", "constants"][..],
        &["--p", "1.2", "--delta", "0.1", "constants"],
        &["--P0", "3,1.5,0", "constants"],
        &["--depth", "5", "constants"],
    ] {
        let out = staircase(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"lamda": 1.0}"#).unwrap();
    let out = staircase(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "constants"],
    );
    assert_eq!(out.status.code(), Some(2));
    let missing = staircase(
        dir.path(),
        &["verify", "--laminate", "/nonexistent/laminate.json"],
    );
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"p": 1.25, "delta": 0.02, "L": 3}"#).unwrap();
    let out = staircase(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "--p", "1.2", "simulate"],
    );
    assert_eq!(out.status.code(), Some(0));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["p"], 1.2);
    assert_eq!(s["stages"], 3);
}

#[test]
fn regularity_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let boot = staircase(dir.path(), &["regularity", "bootstrap", "3", "2", "0.5"]);
    assert_eq!(boot.status.code(), Some(0));
    assert_eq!(
        json(&dir.path().join("bootstrap.json"))["exponents"],
        serde_json::json!([2.0, 4.0, 6.0])
    );

    let pinch = staircase(dir.path(), &["regularity", "pinching", "2", "0.7", "1.0"]);
    assert_eq!(pinch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&pinch.stderr).contains("Lambda^2 (1 - 1/n) < lambda^2"));

    let lemma = staircase(dir.path(), &["regularity", "lemma41"]);
    assert_eq!(lemma.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("lemma41.csv")).unwrap();
    assert!(csv.starts_with("node,lhs,rhs,slack\n") && csv.lines().count() > 1);
}
