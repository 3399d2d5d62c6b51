use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kgood(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgood")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn train_separates_three_points() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "+1,1.0\n-1,-1.0\n+1,0.5\n");
    let kernels = write(dir.path(), "k.json", r#"[{"kind": "linear", "domain_radius": 1.0}]"#);
    for predictor in ["mean-embedding", "trained"] {
        let out = kgood(&[
            "train", "--data", &data, "--kernels", &kernels, "--reg", "l2", "--lambda", "1", "--predictor", predictor,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v = json(&out);
        // pair margins are mu, mu/2, mu/2, so the objective is
        // mu^2/2 + ((1 - mu) + 2 (1 - mu/2)) / 3 on [0, 1], minimized at mu = 2/3
        let mu = v["mu"][0].as_f64().unwrap();
        assert!((mu - 2.0 / 3.0).abs() < 1e-3, "{mu}");
        assert_eq!(v["misclassification"].as_f64(), Some(0.0));
        assert!(v["goodness"]["epsilon_hat"].as_f64().unwrap() >= 0.0);
        assert_eq!(v["goodness"]["predictor_kind"], predictor);
    }
}

#[test]
fn bounds_report_matches_closed_form() {
    let out = kgood(&["bounds", "--n", "100", "--p", "4", "--lambda", "0.5", "--delta", "0.1"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["r_lambda"].as_f64(), Some(2.0));
    assert_eq!(v["reg"], "l2");
    assert_eq!(v["form"], "exact");
    let simplified = json(&kgood(&[
        "bounds", "--n", "100", "--p", "4", "--lambda", "0.5", "--delta", "0.1", "--form", "simplified",
    ]));
    assert_ne!(v["selected"], simplified["selected"]);
}

#[test]
fn bad_inputs_exit_with_status_one() {
    let out = kgood(&["bounds", "--n", "100", "--p", "4", "--lambda", "0.5", "--delta", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let kernels = write(dir.path(), "k.json", r#"[{"kind": "linear"}]"#);
    let out = kgood(&[
        "train", "--data", "/nonexistent.csv", "--kernels", &kernels, "--lambda", "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn experiment_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{"trials": 2, "n": 20, "p": 2, "lambda": 1.0, "max_iters": 100, "mc_pairs": 1000, "seed": 3}"#,
    );
    let report = dir.path().join("r.json");
    let out = kgood(&["experiment", "bound-check", "--config", &config, "--out", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["config"]["kind"], "bound-check");

    let mismatched = write(dir.path(), "m.json", r#"{"kind": "oracle"}"#);
    assert_eq!(kgood(&["experiment", "bound-check", "--config", &mismatched]).status.code(), Some(1));
    let unknown = write(dir.path(), "u.json", r#"{"bogus": 1}"#);
    assert_eq!(kgood(&["experiment", "sparsity", "--config", &unknown]).status.code(), Some(1));
}

#[test]
fn experiment_with_failed_trials_exits_two() {
    // a one-point sample cannot be solved, so those trials fail and the rest run
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{"trials": 2, "p": 2, "regs": ["l2"], "n_sweep": [1, 6], "max_iters": 50, "mc_pairs": 500}"#,
    );
    let out = kgood(&["experiment", "oracle", "--config", &config]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["failures"].as_array().unwrap().len(), 2);
    assert_eq!(v["results"]["summaries"][0]["runs"].as_array().map(Vec::len), Some(2));
}
