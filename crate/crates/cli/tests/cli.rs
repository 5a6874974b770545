use std::process::Command;

use serde_json::Value;

fn qpbc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qpbc")).args(args).output().unwrap()
}

#[test]
fn gen_then_solve() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("box.json");
    let file = file.to_str().unwrap();
    let out = qpbc(&["gen", "--kind", "norm_max", "--n", "3", "--box", "-1", "2", "--out", file]);
    assert!(out.status.success());

    let out = qpbc(&["solve", "--input", file, "--eps", "1e-4", "--seed", "3"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "optimal_within_eps");
    assert!((v["upper"].as_f64().unwrap() + 12.0).abs() < 1e-6);
    for key in ["lower", "incumbent", "nodes", "cuts", "time_sec"] {
        assert!(v.get(key).is_some(), "{key}");
    }

    let out = qpbc(&["oracle", "--input", file]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["value"].as_f64().unwrap(), -12.0);

    let out = qpbc(&["compare", "--input", file]);
    let text = String::from_utf8(out.stdout).unwrap();
    for label in ["L ", "L1", "BOX", "DD0", "oracle"] {
        assert!(text.contains(label), "{text}");
    }
}

#[test]
fn bench_csv_rows() {
    let out = qpbc(&["bench", "--kind", "norm_max", "--n", "2", "--box", "0", "1", "--count", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.contains("optimal_within_eps")));

    let out = qpbc(&["bench", "--count", "0"]);
    assert!(out.status.success());
}

#[test]
fn invalid_input_exit_code() {
    assert_eq!(qpbc(&["bound", "--input", "/does/not/exist.json"]).status.code(), Some(2));
    assert_eq!(qpbc(&["bound", "--variant", "X", "--input", "f"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("convex.json");
    let file = file.to_str().unwrap();
    qpbc(&["gen", "--kind", "stqp", "--n", "3", "--out", file]);
    assert_eq!(qpbc(&["solve", "--input", file]).status.code(), Some(2));
}
