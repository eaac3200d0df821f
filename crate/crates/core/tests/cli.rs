use std::path::Path;
use std::process::{Command, Output};

use aclab::diagnostics::read_table;

const SPHERE: &str = r#"
[manifold]
kind = "sphere"
n_s = 512
n_phi = 1

[interface]
kind = "latitude"
theta0 = 1.0471975511965976

[well]
kind = "quartic"

[solver]
c0 = -0.5
symmetry = ["mirror_x1", "mirror_x2"]
eps = [0.1, 0.07]

[assertions]
max_volume_gap = 1e-10
"#;

fn lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn profile_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &["profile", "--points", "2049"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_table(&dir.path().join("profile.csv")).unwrap();
    assert_eq!(header, ["t", "u", "w"]);
    assert_eq!(rows.len(), 2049);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("c_star 1.33333"));
}

#[test]
fn run_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.toml");
    std::fs::write(&cfg, SPHERE).unwrap();
    let o = lab(&dir.path().join("out"), &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["table.csv", "state.json", "report.txt", "report.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.toml");
    let text = SPHERE.replace("max_volume_gap = 1e-10", "lambda_intercept = { target = 10.0, rel_tol = 0.01 }");
    std::fs::write(&cfg, text).unwrap();
    let o = lab(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SPHERE.replace("[well]\nkind = \"quartic\"\n", "")).unwrap();
    let o = lab(dir.path(), &["sweep", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`well`"), "{err}");
}

#[test]
fn residual_and_solve_on_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.toml");
    std::fs::write(&cfg, SPHERE).unwrap();
    let o = lab(dir.path(), &["residual", cfg.to_str().unwrap(), "--eps", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = lab(dir.path(), &["solve", cfg.to_str().unwrap(), "--eps", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let state: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("state.json")).unwrap()).unwrap();
    assert_eq!(state["eps"], 0.1);
    assert_eq!(state["u"].as_array().unwrap().len(), 512);
}
