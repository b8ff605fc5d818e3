//! End-to-end runs of the `fifm` binary: exit codes, artifact shapes and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn fifm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fifm")).current_dir(dir).args(args).output().expect("spawn fifm")
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, content).unwrap();
    p
}

fn setup() -> TempDir {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "circle3.json", r#"{"kind":"circle","length":3}"#);
    write(d.path(), "interval4.json", r#"{"kind":"interval","length":4}"#);
    write(d.path(), "torus.json", r#"{"kind":"torus2d","side":4}"#);
    write(d.path(), "bad.json", r#"{"kind":"circle","lenght":3}"#);
    write(d.path(), "edge.json", r#"{"customers":["c"],"servers":["s"],"edges":[["c","s"]]}"#);
    write(d.path(), "pts.json", r#"[{"pos":1.0,"color":"red"},{"pos":1.5,"color":"red"}]"#);
    d
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_is_deterministic_and_writes_sidecars() {
    let d = setup();
    let args = |log: &str, stats: &str| {
        let o = fifm(
            d.path(),
            &["simulate", "--space", "circle3.json", "--t-end", "5", "--seed", "11", "--log", log, "--stats", stats],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    args("a.jsonl", "a.csv");
    args("b.jsonl", "b.csv");
    let a = fs::read(d.path().join("a.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(d.path().join("b.jsonl")).unwrap());
    assert_eq!(fs::read(d.path().join("a.csv")).unwrap(), fs::read(d.path().join("b.csv")).unwrap());
    let stats = fs::read_to_string(d.path().join("a.csv")).unwrap();
    assert_eq!(stats.lines().next(), Some("time,total,reds,blues"));
    assert_eq!(stats.lines().count(), 1 + 6);
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("a.jsonl.config.json")).unwrap()).unwrap();
    assert_eq!(side["run"]["command"]["command"], "simulate");
    assert_eq!(side["inputs"]["space"]["kind"], "circle");
}

#[test]
fn malformed_space_is_a_usage_error() {
    let d = setup();
    let o = fifm(d.path(), &["simulate", "--space", "bad.json", "--t-end", "1"]);
    assert_eq!(code(&o), 2);
    let o = fifm(d.path(), &["simulate", "--space", "missing.json", "--t-end", "1"]);
    assert_eq!(code(&o), 2);
    let o = fifm(d.path(), &["simulate", "--space", "circle3.json", "--t-end", "1", "--mu", "-1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn normalising_on_a_torus_is_a_capability_error() {
    let d = setup();
    write(d.path(), "tpts.json", r#"[{"pos":[1.0,1.0],"color":"red"}]"#);
    let o = fifm(d.path(), &["density", "--space", "torus.json", "--config", "tpts.json", "--normalize"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn density_of_two_reds_matches_the_ordered_product() {
    let d = setup();
    let o = fifm(d.path(), &["density", "--space", "circle3.json", "--config", "pts.json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // Neighbourhoods of 1.0 and {1.0, 1.5} on a circle of length 3 have measures 2 and 2.5.
    let expected = 1.0 / ((2.0 + 1.0) * (2.5 + 2.0));
    let got = v["density"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-12 * expected, "{got} vs {expected}");
    let o = fifm(d.path(), &["density", "--space", "interval4.json", "--config", "pts.json", "--boundary", "red"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn local_balance_passes_and_the_perturbed_control_fails() {
    let d = setup();
    let o = fifm(d.path(), &["verify", "local-balance", "--graph", "edge.json", "--report", "lb.json"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("lb.json")).unwrap()).unwrap();
    assert_eq!(rep["status"], "PASS");
    let o = fifm(d.path(), &["verify", "local-balance", "--graph", "edge.json", "--mu-perturbation", "0.3", "--report", "lb2.json"]);
    assert_eq!(code(&o), 1);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("lb2.json")).unwrap()).unwrap();
    assert_eq!(rep["status"], "FAIL");
    assert!(!rep["reports"][0]["witnesses"].as_array().unwrap().is_empty());
}

#[test]
fn lemma_aux_explicit_and_random() {
    let d = setup();
    let o = fifm(d.path(), &["verify", "lemma-aux", "--alphas", "1", "--betas", "2"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = fifm(d.path(), &["verify", "lemma-aux", "--instances", "5", "--max-size", "3"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS"));
    let o = fifm(d.path(), &["verify", "lemma-aux", "--alphas", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn product_form_and_solve_csv() {
    let d = setup();
    let o = fifm(d.path(), &["verify", "product-form", "--graph", "edge.json"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = fifm(d.path(), &["solve", "--graph", "edge.json", "--max-len", "6", "--out", "pi.csv"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(d.path().join("pi.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("state,probability,product_form,abs_diff"));
    let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9, "{total}");
    assert!(d.path().join("pi.csv.config.json").is_file());
}

#[test]
fn holley_with_negative_control() {
    let d = setup();
    let o = fifm(
        d.path(),
        &["verify", "holley", "--window", "interval4.json", "--zeta1", "red", "--zeta2", "blue", "--trials", "100", "--negative-control"],
    );
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 2, "{}", stdout(&o));
    let o = fifm(d.path(), &["verify", "holley", "--window", "interval4.json", "--zeta1", "blue", "--zeta2", "red"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fkg_sweeps_pass() {
    let d = setup();
    let o = fifm(d.path(), &["verify", "fkg", "--space", "circle3.json", "--trials", "100"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn cftp_sample_writes_one_line_per_replica() {
    let d = setup();
    let o = fifm(d.path(), &["cftp-sample", "--space", "circle3.json", "--replicas", "25", "--seed", "3", "--out", "s.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.path().join("s.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 25);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["regeneration_time"].as_f64().unwrap() <= 0.0);
    }
}

#[test]
fn decay_and_tau_csv_headers() {
    let d = setup();
    let o = fifm(d.path(), &["decay", "--side", "6", "--t-end", "2", "--replicas", "4", "--out", "decay.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.path().join("decay.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,beta_S_mean,beta_S_ci_lo,beta_S_ci_hi,bound"));
    assert_eq!(csv.lines().count(), 1 + 3);
    let o = fifm(d.path(), &["tau", "--side", "6", "--replicas", "5", "--horizon", "10", "--bootstrap", "50", "--out", "tau.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.path().join("tau.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("replica,tau,censored"));
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn regen_estimate_is_close_to_exact() {
    let d = setup();
    let o = fifm(d.path(), &["regen", "--space", "circle3.json", "--trials", "20000"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["z"].as_f64().unwrap().abs() < 4.0, "{v}");
}
