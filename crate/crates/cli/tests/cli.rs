use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn trajstat(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_trajstat"))
        .args(args)
        .arg("--workers")
        .arg("2")
        .output()
        .unwrap()
}

fn model(name: &str) -> String {
    models().join(format!("{name}.json")).to_string_lossy().into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let renewal = model("three_level_renewal");
    assert_eq!(trajstat(&["validate", &renewal]).status.code(), Some(0));
    assert_eq!(trajstat(&["--help"]).status.code(), Some(0));
    assert_eq!(trajstat(&["no-such-command"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(model("two_level_decay")).unwrap()).unwrap();
    doc["hamiltonian"]["re"][0][1] = Value::from(1.0);
    std::fs::write(&bad, doc.to_string()).unwrap();
    let st = trajstat(&["validate", bad.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&st.stdout).contains("ermitian"));
    assert_eq!(trajstat(&["validate", bad.to_str().unwrap()]).status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    assert_eq!(trajstat(&["validate", missing.to_str().unwrap()]).status.code(), Some(3));

    // x below x_min is a numerical-domain failure.
    let out = dir.path().join("p.csv");
    let code = trajstat(&["potentials", &renewal, "--kind", "x", "--grid", "-1:-0.5:3", "--out", out.to_str().unwrap()])
        .status
        .code();
    assert_eq!(code, Some(2));
}

#[test]
fn duality_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("duality.csv");
    let st = trajstat(&["duality", &model("three_level_renewal"), "--s-grid", "-0.5:0.5:21", "--out", out.to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "round_trip_error").unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let v: f64 = rec.unwrap()[col].parse().unwrap();
        assert!(v.abs() < 1e-8);
        rows += 1;
    }
    assert_eq!(rows, 21);
    assert!(dir.path().join("duality.csv.meta.json").exists());
}

#[test]
fn equivalence_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let st = trajstat(&[
        "equivalence-report",
        &model("driven_dephased_qubit"),
        "--s",
        "0.2",
        "--tau0",
        "1",
        "--c",
        "0.1",
        "--nodes",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["meta"]["tool"], "trajstat");
    let p = &doc["payload"];
    for key in ["connection_residual", "duality_round_trip_error", "schrodinger_residual"] {
        assert!(p[key].as_f64().unwrap() < 1e-8, "{key}");
    }
    assert!(p["t_times_k_minus_one"].as_f64().unwrap().abs() < 1e-6);
    assert!(p["concentration"].is_object());
    assert!(p["reduced_state"]["limit_diagonal_mismatch"].as_f64().unwrap() < 1e-8);
    assert_eq!(p["phase_check"]["P1"]["passed_1e-10"], true);
    assert_eq!(p["phase_check"]["P2"]["passed_1e-10"], true);
}
