//! End-to-end runs of the `kornlab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn kornlab(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kornlab"));
    cmd.args(args).env_remove("KORNLAB_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("KORNLAB_OUT_DIR", d);
    }
    cmd.output().expect("spawn kornlab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of a CSV table (schema and header lines dropped).
fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(2)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn info_prints_explicit_constant() {
    let o = kornlab(&["info", "--p", "2", "--N", "3", "--diam", "1"], None);
    assert_eq!(code(&o), 0);
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    assert!(err.contains("C=1.492820"), "{err}");
    let out = stdout(&o);
    assert!(out.starts_with("# kornlab-csv v1 info\n"));
    let c: f64 = rows(&out)[0][3].parse().unwrap();
    assert!((c - 1.492820).abs() < 5e-7);
}

#[test]
fn identities_default_run_passes() {
    let o = kornlab(&["identities"], None);
    assert_eq!(code(&o), 0);
    assert_eq!(rows(&stdout(&o)).len(), 400);
}

#[test]
fn malformed_shape_is_a_usage_error() {
    assert_eq!(code(&kornlab(&["identities", "--shape", "sqare"], None)), 2);
    assert_eq!(code(&kornlab(&["korn", "--shape", "ball:-1"], None)), 2);
    assert_eq!(code(&kornlab(&["korn", "--bogus"], None)), 2);
    assert_eq!(code(&kornlab(&["verify", "--suite", "nope"], None)), 2);
}

#[test]
fn impossible_threshold_is_a_violation() {
    let o = kornlab(
        &["identities", "--family", "centered", "--threshold", "1e-18", "--seeds", "3"],
        None,
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn iteration_cap_is_non_convergence() {
    assert_eq!(code(&kornlab(&["korn", "--h", "0.125", "--max-iter", "1"], None)), 3);
}

#[test]
fn korn_refinement_and_modes() {
    let o = kornlab(&["korn", "--mode", "first", "--p", "2", "--shape", "square", "--refine", "8,16,32"], None);
    assert_eq!(code(&o), 0);
    let first: Vec<f64> = rows(&stdout(&o)).iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(first.len(), 3);
    for w in first.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
    assert!((first[2] - 2.0).abs() <= 0.1);

    let o = kornlab(&["korn", "--mode", "second", "--p", "2", "--refine", "8,16,32"], None);
    assert_eq!(code(&o), 0);
    let second: Vec<f64> = rows(&stdout(&o)).iter().map(|r| r[4].parse().unwrap()).collect();
    for (s, f) in second.iter().zip(&first) {
        assert!(s >= f, "{s} < {f}");
    }
}

#[test]
fn dilation_pair_agrees() {
    let o = kornlab(&["korn", "--shape", "ball", "--h", "0.125", "--dilation", "3", "--tol", "1e-10"], None);
    assert_eq!(code(&o), 0);
    let r = rows(&stdout(&o));
    assert_eq!(r[1][0], "ball@x3");
    let (a, b): (f64, f64) = (r[0][4].parse().unwrap(), r[1][4].parse().unwrap());
    assert!((a - b).abs() <= 1e-10);
}

#[test]
fn pk_reports_bound() {
    let o = kornlab(&["pk", "--h", "0.0625", "--p", "2"], None);
    assert_eq!(code(&o), 0);
    let r = &rows(&stdout(&o))[0];
    let (value, bound): (f64, f64) = (r[4].parse().unwrap(), r[8].parse().unwrap());
    assert!(value <= bound);
    assert_eq!(r[9], "true");
}

#[test]
fn sweep_writes_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = kornlab(
        &["sweep", "--vary", "p", "--from", "1.1", "--to", "4", "--steps", "12", "--h", "0.25", "--restarts", "2", "--jobs", "2"],
        Some(dir.path()),
    );
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text, stdout(&o));
    let r = rows(&text);
    assert_eq!(r.len(), 12);
    assert_eq!(r[0][1], "1.1");
    assert_eq!(r[11][1], "4.0");
}

#[test]
fn quick_verify_suite_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = kornlab(
        &["verify", "--suite", "quick", "--format", "json", "--out-dir", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    let first = &v.as_array().unwrap()[0];
    for key in ["checkName", "seed", "h", "p", "lhs", "rhs", "ratio", "pass"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert!(out.join("fundrel.json").exists());
    assert!(!out.join("verify-dossier.json").exists());
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "p = [3.0]\nN = 2\ndiam = 2.0\n").unwrap();
    let o = kornlab(&["info", "--config", cfg.to_str().unwrap(), "--diam", "1"], None);
    assert_eq!(code(&o), 0);
    let r = &rows(&stdout(&o))[0];
    assert_eq!(r[0], "3.0");
    assert_eq!(r[2], "1.0");

    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    assert_eq!(code(&kornlab(&["info", "--config", cfg.to_str().unwrap()], None)), 2);
}

#[test]
fn same_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "shape = \"l-shape\"\nrefine = [8, 12]\np = [1.5, 2.0]\nmode = \"first\"\nrestarts = 2\nformat = \"json\"\n",
    )
    .unwrap();
    let mut outputs = vec![];
    for (i, jobs) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = kornlab(
            &["korn", "--config", cfg.to_str().unwrap(), "--jobs", jobs, "--out-dir", out.to_str().unwrap()],
            None,
        );
        assert_eq!(code(&o), 0);
        outputs.push(std::fs::read(out.join("korn.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
