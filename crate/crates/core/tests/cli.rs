use std::path::{Path, PathBuf};
use std::sync::Arc;

use semilab::cli::{run, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_OK};
use semilab::field::Field;
use semilab::linalg::LinearSolverParams;
use semilab::operator::{assemble, SchemeOptions};
use semilab::potential::harmonic_extension;
use semilab::RunConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn invoke(command: &str, config: &Path, out: &Path) -> i32 {
    run([
        "semilab",
        command,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn checks_on_convex_power_names_failures() {
    let dir = tempfile::tempdir().unwrap();
    let code = invoke("checks", &configs().join("checks_convex.toml"), dir.path());
    assert_eq!(code, EXIT_HYPOTHESIS);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("checks.json")).unwrap())
            .unwrap();
    let failures: Vec<&str> = report["failures"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(failures.contains(&"SH1") && failures.contains(&"H4"), "{failures:?}");
    assert_eq!(manifest(dir.path())["exit_code"], 2);
}

#[test]
fn solve_without_nonlinearity_is_harmonic_extension() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = configs().join("solve_harmonic.toml");
    assert_eq!(invoke("solve", &cfg_path, dir.path()), EXIT_OK);

    let cfg = RunConfig::load(&cfg_path).unwrap();
    let omega = cfg.omega().unwrap();
    let op = assemble(
        omega.clone(),
        &cfg.coefficients(&omega).unwrap(),
        SchemeOptions::default(),
    )
    .unwrap();
    let f = cfg.boundary_field(&omega).unwrap();
    let h = harmonic_extension(&op, &f, LinearSolverParams::default()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let u = Field::from_csv(Arc::clone(&omega), &text).unwrap();
    assert!(u.max_abs_diff(&h).unwrap() < 1e-10);
}

#[test]
fn dichotomy_with_decaying_density() {
    let dir = tempfile::tempdir().unwrap();
    let code = invoke("dichotomy", &configs().join("dichotomy_decay.toml"), dir.path());
    assert_eq!(code, EXIT_OK);
    let verdict = std::fs::read_to_string(dir.path().join("verdict.csv")).unwrap();
    assert_eq!(verdict.lines().nth(1), Some("satisfied,yes,no"));
}

#[test]
fn manifests_are_deterministic_up_to_timestamp() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = configs().join("majorant.toml");
    assert_eq!(invoke("majorant", &cfg, a.path()), EXIT_OK);
    assert_eq!(invoke("majorant", &cfg, b.path()), EXIT_OK);
    let (mut ma, mut mb) = (manifest(a.path()), manifest(b.path()));
    for m in [&mut ma, &mut mb] {
        m.as_object_mut().unwrap().remove("created_unix");
    }
    assert_eq!(ma, mb);
    assert!(!ma["artifacts"].as_array().unwrap().is_empty());
    assert_eq!(ma["seed"], 20_240_917);
}

#[test]
fn seed_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("checks_convex.toml");
    let code = run([
        "semilab",
        "checks",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(code, EXIT_HYPOTHESIS);
    assert_eq!(manifest(dir.path())["seed"], 99);
}

#[test]
fn malformed_config_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[geometry]\ndim = 2\nshape = [5, 5]\nbounds = [[0, 1], [0, 1]]\n[phi]\nfamily = \"expr\"\nexpr = \"2*^3\"\n",
    )
    .unwrap();
    assert_eq!(invoke("solve", &cfg, &dir.path().join("out")), EXIT_CONFIG);
}
