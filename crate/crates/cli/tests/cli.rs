//! End-to-end CLI checks driving the compiled binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_randpoincare"))
}

#[test]
fn missing_model_file_exits_2_with_config_stage() {
    let out = bin()
        .args(["kernel", "--model", "/nonexistent/model.json", "--sigma2", "0.01"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage=config"), "stderr: {stderr}");
}

#[test]
fn unknown_suite_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let kernel_path = dir.path().join("k.json");
    build_small_kernel(&kernel_path);
    let out = bin()
        .args([
            "verify",
            "--kernel",
            kernel_path.to_str().unwrap(),
            "--suite",
            "bogus",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn build_small_kernel(path: &Path) {
    let out = bin()
        .args([
            "kernel",
            "--model",
            "reference",
            "--sigma2",
            "0.012",
            "--grid",
            "36",
            "--samples",
            "150",
            "--dt",
            "0.002",
            "--seed",
            "3",
            "--out",
            path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
}

#[test]
fn kernel_files_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    build_small_kernel(&a);
    build_small_kernel(&b);
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b, "kernel files differ between identical runs");
}

#[test]
fn exact_suite_passes_on_a_small_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let kernel_path = dir.path().join("k.json");
    build_small_kernel(&kernel_path);
    let out = bin()
        .args([
            "verify",
            "--kernel",
            kernel_path.to_str().unwrap(),
            "--suite",
            "exact",
        ])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}");
    assert!(stdout.contains("[PASS] detailed_balance"), "{stdout}");
    assert!(stdout.contains("[PASS] geometric_exit_law"), "{stdout}");
}

#[test]
fn analyze_writes_artifacts_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = bin()
        .args([
            "analyze",
            "--model",
            "reference",
            "--sigma2",
            "0.02,0.012",
            "--grid",
            "36",
            "--samples",
            "150",
            "--dt",
            "0.002",
            "--seed",
            "3",
            "--checks",
            "identities",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "stdout: {stdout}\nstderr: {stderr}");
    for file in [
        "orbits.csv",
        "kernel_sigma2_0.02.json",
        "kernel_sigma2_0.012.json",
        "structure.json",
        "spectrum_sigma2_0.02.csv",
        "spectrum_sigma2_0.012.csv",
        "reports.txt",
        "reports.json",
    ] {
        assert!(out_dir.join(file).exists(), "missing artifact {file}");
    }
}

#[test]
fn model_spec_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.json");
    std::fs::write(
        &model_path,
        r#"{
            "name": "single_well",
            "catalog": {
                "kind": "radial_wells",
                "omega": 6.283185307179586,
                "theta_noise": 0.1,
                "roots": [1.0],
                "r_min": 0.5,
                "r_max": 1.6
            },
            "sigma": 0.1,
            "confinement": "recurrent_a",
            "dimension": 2
        }"#,
    )
    .unwrap();
    let kernel_path = dir.path().join("k.json");
    let out = bin()
        .args([
            "kernel",
            "--model",
            model_path.to_str().unwrap(),
            "--sigma2",
            "0.01",
            "--grid",
            "20",
            "--samples",
            "120",
            "--dt",
            "0.002",
            "--out",
            kernel_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    assert!(kernel_path.exists());
}

#[test]
fn hierarchy_prints_order_and_theta() {
    let out = bin()
        .args(["hierarchy", "--model", "reference"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("metastable order"), "{stdout}");
    assert!(stdout.contains("theta"), "{stdout}");
}
