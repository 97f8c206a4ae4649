//! End-to-end checks of the `bfn` binary: exit codes, CSV schemas, config
//! handling, and byte-exact replay.

use std::path::Path;
use std::process::Command;

fn bfn_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bfn"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn verify_single_suite_exits_zero_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = bfn_cmd()
        .args(["verify", "--only", "spectral-radius", "--seed", "3"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report = read(&out);
    assert!(report.contains("\"passed\": true"));
    assert!(report.contains("spectral-radius"));
}

#[test]
fn verify_unknown_suite_is_a_usage_error() {
    let status = bfn_cmd()
        .args(["verify", "--only", "no-such-suite"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn sweep_single_point_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "[sweep]\nseed = 7\ngains = 1.0\nnoise = false\n").unwrap();
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let status = bfn_cmd()
            .arg("sweep")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = read(&out_a);
    // header + exactly one data row
    assert_eq!(a.lines().count(), 2);
    assert_eq!(a.lines().next().unwrap(), "kappa,err,seed");
    assert!(a.lines().nth(1).unwrap().ends_with(",7"));
    // replay is byte-identical
    assert_eq!(a, read(&out_b));
    // metadata carries the seed and config hash
    let meta = read(&out_a.with_extension("meta.json"));
    assert!(meta.contains("\"seed\": 7"));
    assert!(meta.contains("config_hash"));
}

#[test]
fn sweep_rejects_negative_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "[sweep]\ngains = -0.5\n").unwrap();
    let output = bfn_cmd()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("nonnegative"), "stderr: {stderr}");
}

#[test]
fn wave_small_run_writes_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        "[wave]\nseed = 3\nmesh_elems = 20\nt_final = 2.0\ndt = 2e-3\niters = 2\nwarmup = 1\nnoise_scale = 0.0\n",
    )
    .unwrap();
    let out = dir.path().join("wave.csv");
    let status = bfn_cmd()
        .arg("wave")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let table = read(&out);
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,param_err,displ_err,vel_err"
    );
    assert_eq!(table.lines().count(), 3); // header + 2 iterations
    assert!(table.lines().nth(1).unwrap().starts_with("1,"));
}

#[test]
fn linear_demo_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hist.csv");
    let status = bfn_cmd()
        .args(["linear-demo", "--seed", "28"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let hist = read(&out);
    assert!(hist.starts_with("iteration,kappa,cost,zeta_err,theta_err"));
    assert!(hist.lines().count() > 10);
}
