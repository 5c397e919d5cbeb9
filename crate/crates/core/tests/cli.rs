//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use seqlimit::PlanDocument;

fn seqlimit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqlimit"))
        .args(args)
        .env("SEQLIMIT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn design_one_sided(dir: &Path) -> std::path::PathBuf {
    let plan = dir.join("plan.json");
    let out = seqlimit(&[
        "design", "--theta0", "0.4", "--theta1", "0.6", "--alpha", "0.05", "--beta", "0.05", "--zeta", "0.5",
        "--stages", "4", "--out", plan.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    plan
}

#[test]
fn design_document_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let plan = design_one_sided(dir.path());
    let original = text(&plan);
    let doc = PlanDocument::load(&plan).unwrap();
    assert_eq!(doc.to_json().unwrap(), original);
    assert_eq!(doc.plan.as_ref().unwrap().s(), 4);
}

#[test]
fn oc_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let plan = design_one_sided(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let r = seqlimit(&["oc", "--plan", plan.to_str().unwrap(), "--grid", "0.3:0.7:0.1", "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let csv = text(&a);
    assert_eq!(csv, text(&b));
    assert_eq!(csv.lines().count(), 6);
    // acceptance probabilities in each row sum to one
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((cols[1] + cols[2] - 1.0).abs() < 1e-12, "{line}");
    }
}

#[test]
fn tune_records_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let plan = design_one_sided(dir.path());
    let tuned = dir.path().join("tuned.json");
    let r = seqlimit(&["tune", "--plan", plan.to_str().unwrap(), "--tol", "1e-2", "--out", tuned.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let doc = PlanDocument::load(&tuned).unwrap();
    let rec = doc.provenance.tuning.expect("tuning record");
    assert!(rec.zeta > 0.0 && rec.bracket.0 == rec.zeta && rec.bracket.1 > rec.zeta);
    assert_eq!(doc.plan.unwrap().spec.zeta, rec.zeta);
}

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let plan = design_one_sided(dir.path());
    let run = |seed: &str| {
        let r = seqlimit(&["simulate", "--plan", plan.to_str().unwrap(), "--grid", "0.5", "--trials", "500", "--seed", seed]);
        assert!(r.status.success());
        r.stdout
    };
    assert_eq!(run("7"), run("7"));
    assert_ne!(run("7"), run("8"));
}

#[test]
fn compare_with_sprt() {
    let dir = tempfile::tempdir().unwrap();
    let plan = design_one_sided(dir.path());
    let r = seqlimit(&["compare", "--plan", plan.to_str().unwrap(), "--sprt", "--grid", "0.4:0.6:0.1", "--trials", "200", "--seed", "1"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let out = String::from_utf8(r.stdout).unwrap();
    assert!(out.contains("sprt"), "{out}");
}

#[test]
fn two_prop_design_and_certify() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("tp.json");
    let r = seqlimit(&[
        "design", "--kind", "two-prop", "--theta0", "-0.4", "--theta1", "0.4", "--alpha", "0.2", "--beta", "0.2",
        "--stages", "2", "--out", plan.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let p = plan.to_str().unwrap();
    // a loose requirement is proved, an impossible one is not
    let ok = seqlimit(&["certify", "--plan", p, "--deltas", "0.9,0.9"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = seqlimit(&["certify", "--plan", p, "--deltas", "0.001,0.001"]);
    assert_eq!(bad.status.code(), Some(1));
    let csv = dir.path().join("cert.csv");
    let r = seqlimit(&["certify", "--plan", p, "--hypothesis", "0", "--deltas", "0.9,0.9", "--out", csv.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(text(&csv).starts_with("hypothesis,px_lo"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // infeasible: fixed stage sizes that never close
    let r = seqlimit(&[
        "design", "--theta0", "0.4", "--theta1", "0.6", "--alpha", "0.05", "--beta", "0.05", "--schedule", "fixed",
        "--sizes", "2,3",
    ]);
    assert_eq!(r.status.code(), Some(1));
    // malformed document
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"schema_version\": 1,\n \"kind\": 5}").unwrap();
    let r = seqlimit(&["oc", "--plan", broken.to_str().unwrap(), "--grid", "0.5"]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("line 2"), "{err}");
    // domain error and usage error
    let r = seqlimit(&["design", "--theta0", "0.6", "--theta1", "0.4", "--alpha", "0.05", "--beta", "0.05"]);
    assert_eq!(r.status.code(), Some(2));
    let r = seqlimit(&["design", "--bogus"]);
    assert_eq!(r.status.code(), Some(2));
    // certification needs a two-proportion plan
    let plan = design_one_sided(dir.path());
    let r = seqlimit(&["certify", "--plan", plan.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}
