use std::process::Command;

fn bdls() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bdls"))
}

#[test]
fn preset_prints_valid_json() {
    let out = bdls().args(["preset", "fig2"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["experiment"], "fig2");
    assert_eq!(v["ensemble"]["n_traj"], 200);
}

#[test]
fn malformed_config_fails_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"experiment": "fig1", "eps": [0.1"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = bdls().arg("run").arg(&config).arg("--out").arg(&out_dir).output().unwrap();
    assert!(!out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "ConfigError");
    assert!(!out_dir.exists());
}

#[test]
fn failing_validation_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("fig1.json");
    let mut v: serde_json::Value =
        serde_json::from_slice(&bdls().args(["preset", "fig1"]).output().unwrap().stdout).unwrap();
    v["eps"] = serde_json::json!([0.0]);
    v["m"] = serde_json::json!(-3.0);
    std::fs::write(&config, v.to_string()).unwrap();
    let out = bdls().arg("validate").arg(&config).output().unwrap();
    assert!(!out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 2);

    let out = bdls().arg("run").arg(&config).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    assert!(!dir.path().join("o").exists());
}

#[test]
fn budget_override_refuses_large_runs() {
    let dir = tempfile::tempdir().unwrap();
    bdls().args(["preset", "fig1", "--out"]).arg(dir.path()).output().unwrap();
    let config = dir.path().join("fig1.json");
    let out = bdls().arg("validate").arg(&config).args(["--budget", "1000"]).output().unwrap();
    assert!(!out.status.success());
    let out = bdls().arg("validate").arg(&config).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_slice(&bdls().args(["preset", "fig2"]).output().unwrap().stdout).unwrap();
    v["eps"] = serde_json::json!([0.1]);
    v["ensemble"]["n_traj"] = serde_json::json!(4);
    let config = dir.path().join("small.json");
    std::fs::write(&config, v.to_string()).unwrap();
    let out = bdls().arg("run").arg(&config).env("BDLS_OUTPUT_DIR", dir.path().join("env")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("env").join("fig2");
    for f in ["passage.csv", "manifest.json", "run_timing.json", "summary.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}
