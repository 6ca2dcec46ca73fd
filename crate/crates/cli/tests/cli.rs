use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duallearn"));
    cmd.env_remove("DUALLEARN_OUT").env("RUST_BACKTRACE", "0");
    cmd
}

fn run_ok(cmd: &mut Command) -> PathBuf {
    let out: Output = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const REGRESSION: &str = r#"{
  "problem": {
    "data": {"source": "two_gaussians", "means": [[-1, 0], [1, 0]], "sigma": 1, "n": 200},
    "objective": {"kind": {"type": "clamped_cross_entropy", "p_min": 0.001}, "bound": 6.907755278982137},
    "constraints": [{"loss": {"kind": {"type": "rate_indicator", "shift": 0.5}, "bound": 1}, "threshold": 0.45}]
  },
  "dual": {"iterations": 15, "step": 0.5, "snapshot_stride": 1}
}"#;

#[test]
fn example1_records_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_ok(
        bin()
            .args([
                "example1", "--trials", "40", "--n", "100", "--seed", "11", "--out",
            ])
            .arg(tmp.path()),
    );
    assert_eq!(dir, tmp.path().join("example1-seed11"));
    let summary = json(&dir.join("summary.json"));
    assert_eq!(summary["trials"], 40);
    assert!(summary["fraction_at_one_eighth"].as_f64().unwrap() >= 0.9);
    let lines: Vec<Value> = fs::read_to_string(dir.join("trace.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 40);
    assert_eq!(lines[3]["seed"], 14);
    for key in ["seed", "N", "tau_bar", "theta_hat", "population_J"] {
        assert!(lines[0].get(key).is_some(), "missing {key}");
    }
    assert_eq!(fs::read_to_string(dir.join("seed")).unwrap().trim(), "11");
}

#[test]
fn parallel_trials_match_serial() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let serial = run_ok(
        bin()
            .args(["example1", "--trials", "30", "--out"])
            .arg(a.path()),
    );
    let parallel = run_ok(
        bin()
            .args([
                "example1",
                "--trials",
                "30",
                "--parallel-trials",
                "4",
                "--out",
            ])
            .arg(b.path()),
    );
    assert_eq!(
        fs::read(serial.join("trace.jsonl")).unwrap(),
        fs::read(parallel.join("trace.jsonl")).unwrap()
    );
}

#[test]
fn bounds_cap_from_xi() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "b.json",
        r#"{"bounds": {"bound": 1, "zeta": [0.05]}}"#,
    );
    let dir = run_ok(
        bin()
            .args(["bounds", "--xi", "0.1", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path()),
    );
    let report = json(&dir.join("summary.json"));
    assert!((report["delta_cap"].as_f64().unwrap() - 10.0).abs() < 1e-12);
    // The echo records the override.
    assert_eq!(json(&dir.join("config.json"))["bounds"]["xi"], 0.1);
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"dual": {"iterations": 3, "stpe": 1}}"#,
    );
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dual.stpe"), "{err}");
}

#[test]
fn train_without_constraints_has_empty_slacks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "u.json",
        r#"{
  "problem": {
    "data": {"source": "two_gaussians", "means": [[-1], [1]], "sigma": 1, "n": 50},
    "objective": {"kind": {"type": "squared"}, "bound": 4}
  },
  "dual": {"iterations": 4}
}"#,
    );
    let dir = run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path()),
    );
    let summary = json(&dir.join("summary.json"));
    assert_eq!(summary["final_slacks"], Value::Array(vec![]));
    let first = fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    let line: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["slacks"], Value::Array(vec![]));
    assert_eq!(line["mu"], Value::Array(vec![]));
}

#[test]
fn reruns_are_byte_identical_and_eval_reads_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "r.json", REGRESSION);
    let run = |root: &Path| {
        run_ok(
            bin()
                .args(["train", "--seed", "5", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(root),
        )
    };
    let a = run(&tmp.path().join("a"));
    let b = run(&tmp.path().join("b"));
    for file in ["trace.jsonl", "model.txt", "summary.json", "seed"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let echo = json(&a.join("config.json"));
    assert_eq!(echo["seed"], 5);
    assert_eq!(echo["problem"]["data"]["seed"], 5);
    assert_eq!(echo["inner"]["warm_start"], true);

    let ev = run_ok(
        bin()
            .args(["eval", "--seed", "5", "--config"])
            .arg(&cfg)
            .arg("--run")
            .arg(&a)
            .arg("--out")
            .arg(tmp.path()),
    );
    let summary = json(&ev.join("summary.json"));
    assert_eq!(summary["models"], 15);
    let train = json(&a.join("summary.json"));
    let diff = summary["metrics"]["objective"].as_f64().unwrap()
        - train["randomized"]["objective"].as_f64().unwrap();
    assert!(diff.abs() < 1e-12, "{diff}");

    let single = run_ok(
        bin()
            .args(["eval", "--seed", "5", "--config"])
            .arg(&cfg)
            .arg("--model")
            .arg(a.join("model.txt"))
            .arg("--out")
            .arg(tmp.path().join("m")),
    );
    let acc = json(&single.join("summary.json"))["metrics"]["accuracy"]
        .as_f64()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn env_var_sets_the_default_root() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_ok(
        bin()
            .env("DUALLEARN_OUT", tmp.path())
            .args(["example1", "--trials", "2"]),
    );
    assert_eq!(dir, tmp.path().join("example1-seed0"));
    assert!(dir.join("summary.json").exists());

    // --out wins over the environment.
    let other = tempfile::tempdir().unwrap();
    let dir = run_ok(
        bin()
            .env("DUALLEARN_OUT", tmp.path())
            .args(["example1", "--trials", "2", "--out"])
            .arg(other.path()),
    );
    assert_eq!(dir, other.path().join("example1-seed0"));
}

#[test]
fn missing_data_names_the_module() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"problem": {"data": {"source": "csv", "path": "nope.csv", "label": "y"},
             "objective": {"kind": {"type": "zero_one"}, "bound": 1}}}"#,
    );
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data:") && err.contains("nope.csv"), "{err}");
}
