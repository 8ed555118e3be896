//! Black-box checks of the installed binary: argument handling, exit
//! codes, and byte-stable outputs.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cnn-recover"))
}

fn write_cfg(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "[experiment]\nwat = 1\n");
    let out = bin().arg("fig-a").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));

    // valid file, missing required geometry
    let cfg = write_cfg(dir.path(), "[experiment]\nk = 5\n");
    let out = bin().arg("fig-a").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_1() {
    let out = bin()
        .arg("moments-table")
        .arg("--config")
        .arg("/nonexistent/exp.cfg")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failures_exit_3() {
    // 500 resampling slices of a 2000-sample set leave 3 samples per
    // slice, fewer than k: whitening is impossible and the rank error
    // propagates to the exit code.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[experiment]\nk = 5\nr = 2\nt = 2\nkappa = 2.0\nactivations = squared_relu\n\
         n_samples = 2000\nmax_iters = 500\nresample = true\nseeds = 0\n",
    );
    let out = bin()
        .arg("pipeline")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_failures_exit_4() {
    assert_eq!(cnn_recover::Error::CheckFailed("x".into()).exit_code(), 4);
}

#[test]
fn seed_flag_overrides_and_outputs_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[experiment]\nk = 5\nr = 2\nt = 2\nkappa = 2.0\nn_samples = 200\n\
         max_iters = 30\nstep_size = 0.01\nseeds = 0, 1, 2\n",
    );
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let status = bin()
            .arg("fig-b")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .arg("--seed")
            .arg("7")
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv = std::fs::read_to_string(out1.join("fig_b.csv")).unwrap();
    // --seed collapses the seed list to the one given
    assert!(csv.starts_with("iter,loss_s7\n"));
    assert_eq!(
        std::fs::read(out1.join("fig_b.csv")).unwrap(),
        std::fs::read(out2.join("fig_b.csv")).unwrap()
    );
}
