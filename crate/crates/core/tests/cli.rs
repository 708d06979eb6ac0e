use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bltree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bltree"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dlm_file(dir: &TempDir, horizon: usize) -> PathBuf {
    let path = dir.path().join(format!("dlm{horizon}.toml"));
    let o = bltree(&[
        "build",
        "dlm",
        "--horizon",
        &horizon.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    path
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_counts() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 4);
    let o = bltree(&["validate", s(&path)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("8 nodes, 7 arcs"), "{}", stdout(&o));
}

#[test]
fn validate_json() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 4);
    let o = bltree(&["--json-out", "validate", s(&path)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["nodes"], 8);
    assert_eq!(v["arcs"], 7);
    assert_eq!(v["valid"], true);
}

#[test]
fn cycle_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    for n in ["a", "b", "c"] {
        text += &format!("[[nodes]]\nname = \"{n}\"\nlabels = [\"{n}\"]\nexpectation = [0.0]\nvariance = [[1.0]]\n\n");
    }
    for (f, t) in [("a", "b"), ("b", "c"), ("c", "a")] {
        text += &format!("[[arcs]]\nfrom = \"{f}\"\nto = \"{t}\"\ncovariance = [[0.1]]\n\n");
    }
    let path = write(&dir, "cycle.toml", &text);
    let o = bltree(&["validate", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[cycle]"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn malformed_row_names_its_line() {
    let dir = TempDir::new().unwrap();
    let text =
        "[[nodes]]\nname = \"a\"\nlabels = [\"a\", \"b\"]\nexpectation = [0.0, 0.0]\nvariance = [[1.0, 0.0], [0.0]]\n";
    let path = write(&dir, "bad.toml", text);
    let o = bltree(&["validate", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn indefinite_node_fails_validation() {
    let dir = TempDir::new().unwrap();
    let text = "[[nodes]]\nname = \"a\"\nlabels = [\"a\", \"b\"]\nexpectation = [0.0, 0.0]\nvariance = [[1.0, 2.0], [2.0, 1.0]]\n";
    let path = write(&dir, "neg.toml", text);
    let o = bltree(&["validate", s(&path)]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn adjust_prints_every_node() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 4);
    let o = bltree(&["adjust", s(&path), "--node", "X1", "--values", "17", "--verify-oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let theta4 = out.lines().find(|l| l.starts_with("theta4")).unwrap();
    assert!(theta4.contains("resolution 0.674"), "{theta4}");
    assert!(theta4.contains("E (17.9, 0)"), "{theta4}");
    assert!(theta4.contains("V [[220, 29.2], [29.2, 10.1]]"), "{theta4}");
    let dev = out.lines().find(|l| l.starts_with("oracle deviation")).unwrap();
    let value: f64 = dev.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(value < 1e-9);
}

#[test]
fn adjust_writes_the_adjusted_model() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 3);
    let out = dir.path().join("after.toml");
    let o = bltree(&[
        "adjust",
        s(&path),
        "--node",
        "X1",
        "--values",
        "17",
        "--prune",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = bltree(&["validate", s(&out)]);
    assert!(stdout(&o).contains("5 nodes, 4 arcs"), "{}", stdout(&o));
    let o = bltree(&["adjust", s(&out), "--node", "X2", "--values", "22"]);
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("theta3"))
        .unwrap()
        .to_string();
    assert!(line.contains("E (19.8, 0.126)"), "{line}");
}

#[test]
fn partial_adjust_by_label() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 2);
    let o = bltree(&[
        "adjust",
        s(&path),
        "--node",
        "theta1",
        "--labels",
        "theta1.0",
        "--values",
        "21",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("theta1"))
        .unwrap()
        .to_string();
    assert!(line.contains("E (21, 0)"), "{line}");
}

#[test]
fn diagnose_prints_stage_diagnostics() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 4);
    let o = bltree(&[
        "diagnose",
        s(&path),
        "--target",
        "theta4",
        "--obs",
        "X1=17",
        "--obs",
        "X2=22",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("bearing (-0.094, 0.0423)  size 0.0106  expected 0.674  ratio 0.0158  low"),
        "{out}"
    );
    assert!(
        out.contains("cumulative transform [[0.825, -1.92], [0.00927, 0.0017]]"),
        "{out}"
    );
}

#[test]
fn diagnose_json() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 4);
    let o = bltree(&[
        "diagnose",
        s(&path),
        "--target",
        "theta4",
        "--obs",
        "X1=17",
        "--json-out",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let partial = &v["stages"][0]["partial"];
    assert!((partial["size"].as_f64().unwrap() - 0.0106).abs() < 5e-5);
    assert!((partial["expected_size"].as_f64().unwrap() - 0.674).abs() < 5e-4);
    assert_eq!(partial["flag"], "low");
}

#[test]
fn diagnose_without_observations_reports_none() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 2);
    let o = bltree(&["diagnose", s(&path), "--target", "theta2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("no observations"), "{}", stdout(&o));
}

#[test]
fn build_nstep_counts() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("n.toml");
    let o = bltree(&["build", "nstep", "--n", "3", "--N", "5", "--out", s(&path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = bltree(&["validate", s(&path)]);
    assert!(stdout(&o).contains("4 nodes, 3 arcs"), "{}", stdout(&o));
}

#[test]
fn build_dlm_horizon_one() {
    let o = bltree(&["build", "dlm", "--horizon", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches("[[nodes]]").count(), 2);
}

#[test]
fn bad_spec_is_a_domain_error() {
    let o = bltree(&["build", "nstep", "--n", "6", "--N", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error["));
}

#[test]
fn unknown_node_and_usage_exit_codes() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 2);
    let o = bltree(&["adjust", s(&path), "--node", "X9", "--values", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[unknown-node]"));
    let o = bltree(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]"));
    let o = bltree(&["adjust", s(&path), "--node", "X1", "--values", "abc"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn precise_output_has_full_digits() {
    let dir = TempDir::new().unwrap();
    let path = dlm_file(&dir, 2);
    let o = bltree(&["--precise", "adjust", s(&path), "--node", "X1", "--values", "17"]);
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("theta1"))
        .unwrap()
        .to_string();
    assert!(line.contains("17.8984"), "{line}");
}
