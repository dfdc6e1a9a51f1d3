use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SIM: &str = r#"
[integrator]
t_end = 4.0

[experiment]
kind = "simulate"
initial_radius = 2.0

[output]
every = 50
checkpoint_every = 1500
"#;

fn wavemix(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavemix"))
        .args(args)
        .current_dir(dir)
        .env_remove("WAVEMIX_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn data_rows(text: &str) -> Vec<String> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).map(str::to_string).collect()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("stderr is empty")).unwrap()
}

#[test]
fn zero_horizon_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.toml", "[integrator]\nt_end = 0.0\n");
    let out = wavemix(&["simulate", "--config", &cfg, "--out", "run", "--format", "csv"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("run/trajectory.csv")).unwrap();
    assert!(text.lines().any(|l| l == "t,xi_h_sq,xi_psi_sq,e,e_psi,f,f_psi,f_p,f_psi_p"));
    assert!(data_rows(&text).is_empty());
    assert!(!tmp.path().join("run/trajectory.ndjson").exists());
}

#[test]
fn unknown_key_is_a_json_error_with_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[physics]\ngama = 0.5\n");
    let out = wavemix(&["spectrum", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["record"], "error");
    assert_eq!(err["kind"], "unknown_key");
    assert!(err["message"].as_str().unwrap().contains("gama"));
}

#[test]
fn superlinear_exponent_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "m.toml", "[physics]\nm = 1.5\n");
    let out = wavemix(&["spectrum", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "config");
}

#[test]
fn slow_coefficient_decay_warns_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", "[noise]\nq = 2.0\n");
    let out = wavemix(&["spectrum", "--config", &cfg, "--out", "s"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.lines().any(|l| l.contains("\"warning\"")), "{text}");
}

#[test]
fn spectrum_lists_every_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wavemix(&["spectrum", "--out", "s"], tmp.path());
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["kind"], "spectrum");
    let text = fs::read_to_string(tmp.path().join("s/spectrum.csv")).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 1023);
    let lambdas: Vec<f64> = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(lambdas.windows(2).all(|w| w[1] > w[0]));
    assert!(tmp.path().join("s/basis.csv").exists());
    assert!(tmp.path().join("s/manifest.toml").exists());
}

#[test]
fn rank_zero_coupling_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[integrator]\nt_end = 1.0\n[experiment]\nkind = \"couple\"\npaths = 2\nrank = 0\n[output]\nevery = 100\n",
    );
    let out = wavemix(&["couple", "--config", &cfg, "--out", "c", "--single-thread"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("c/couple.ndjson")).unwrap();
    let paths = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["record"] == "path")
        .count();
    assert_eq!(paths, 2);
}

#[test]
fn resume_is_bitwise_and_rejects_changed_physics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.toml", SIM);
    let full = wavemix(&["simulate", "--config", &cfg, "--out", "full", "--format", "csv"], tmp.path());
    assert!(full.status.success(), "{}", String::from_utf8_lossy(&full.stderr));
    let cp = tmp.path().join("full/checkpoint.json");
    let cp_str = cp.to_str().unwrap();
    let resumed = wavemix(
        &["simulate", "--config", &cfg, "--out", "resumed", "--format", "csv", "--resume", cp_str],
        tmp.path(),
    );
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    let a = data_rows(&fs::read_to_string(tmp.path().join("full/trajectory.csv")).unwrap());
    let b = data_rows(&fs::read_to_string(tmp.path().join("resumed/trajectory.csv")).unwrap());
    assert!(!b.is_empty());
    // every resumed row appears verbatim at the end of the uninterrupted run
    let tail = &a[a.len() - b.len()..];
    assert_eq!(tail, &b[..]);
    assert_eq!(a.last(), b.last());

    let altered = write_config(tmp.path(), "gamma.toml", &format!("{SIM}\n[physics]\ngamma = 0.6\n"));
    let bad = wavemix(&["simulate", "--config", &altered, "--out", "bad", "--resume", cp_str], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(stderr_json(&bad)["kind"], "hash_mismatch");
}

#[test]
fn seed_flag_changes_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", "[integrator]\nt_end = 0.5\n[output]\nevery = 50\n");
    let run = |seed: &str, out: &str| {
        let o = wavemix(&["simulate", "--config", &cfg, "--seed", seed, "--out", out, "--format", "csv"], tmp.path());
        assert!(o.status.success());
        data_rows(&fs::read_to_string(tmp.path().join(out).join("trajectory.csv")).unwrap())
    };
    let a = run("1", "a");
    assert_eq!(a, run("1", "b"));
    assert_ne!(a, run("2", "c"));
}

#[test]
fn malformed_thread_variable_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wavemix"))
        .args(["spectrum", "--out", "s"])
        .current_dir(tmp.path())
        .env("WAVEMIX_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["record"], "error");
}

#[test]
fn verify_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wavemix(&["verify", "--out", "v"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("v/verify.json")).unwrap()).unwrap();
    assert!(report["provenance"]["manifest_hash"].is_string());
}
