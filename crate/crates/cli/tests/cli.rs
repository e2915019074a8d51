use std::fs;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ridetrace(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ridetrace"));
    for (k, _) in std::env::vars() {
        if k.starts_with("RIDETRACE_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).envs(envs.iter().copied()).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn show_config_prints_defaults() {
    let o = ridetrace(&["show-config"], &[]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "seed=7"));
    assert!(text.lines().any(|l| l == "grid.rows=24"));
    assert!(text.lines().any(|l| l == "pipeline.delta=0.9"));
    assert!(text.contains("# hash "));
}

#[test]
fn file_env_and_flag_layer_in_order() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("small.conf");
    fs::write(&file, "# desk run\nseed=3\ngrid.rows=12\n").unwrap();
    let path = file.to_str().unwrap();

    let o = ridetrace(&["--config", path, "show-config"], &[]);
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "seed=3"));
    assert!(text.lines().any(|l| l == "grid.rows=12"));

    let o = ridetrace(&["--config", path, "show-config"], &[("RIDETRACE_GRID_ROWS", "16")]);
    assert!(stdout(&o).lines().any(|l| l == "grid.rows=16"));

    let o = ridetrace(&["--config", path, "--seed", "11", "show-config"], &[("RIDETRACE_SEED", "5")]);
    assert!(stdout(&o).lines().any(|l| l == "seed=11"));
}

#[test]
fn config_errors_exit_with_two() {
    let o = ridetrace(&["show-config"], &[("RIDETRACE_GRID_ROWS", "many")]);
    assert_eq!(o.status.code(), Some(2));
    let o = ridetrace(&["show-config"], &[("RIDETRACE_PIPELINE_DELTA", "0.3")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));

    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("bad.conf");
    fs::write(&file, "grid.rows=24\nnot_a_key=1\n").unwrap();
    let o = ridetrace(&["--config", file.to_str().unwrap(), "show-config"], &[]);
    assert_eq!(o.status.code(), Some(2));

    let o = ridetrace(&["--config", "/nonexistent/ridetrace.conf", "show-config"], &[]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn missing_artifacts_exit_with_three() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = ridetrace(&["--out", out, "stage1"], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ridetrace failed"));
}

#[test]
fn usage_errors_are_rejected() {
    let o = ridetrace(&["launch"], &[]);
    assert!(!o.status.success());
    let o = ridetrace(&["--help"], &[]);
    assert!(stdout(&o).contains("RIDETRACE_GRID_ROWS"));
}
