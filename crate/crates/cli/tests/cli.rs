use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn assort() -> Command {
    Command::new(env!("CARGO_BIN_EXE_assort"))
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code_of(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn small_run_config(seed: u64) -> String {
    format!(
        r#"{{
  "instance": {{
    "n": 5, "k": 2, "d": 2, "horizon": 60,
    "feature_mode": {{"mode": "changing"}},
    "seed": {seed}
  }},
  "policy": {{"name": "mle-ucb", "mode": "experiment"}},
  "replications": 2
}}"#
    )
}

fn grab(stdout: &str, key: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("missing `{key}` in output:\n{stdout}"))
        .trim()
        .to_string()
}

#[test]
fn help_and_usage_exit_codes() {
    let help = assort().arg("--help").output().unwrap();
    assert_eq!(code_of(&help), 0);
    assert!(stdout_of(&help).contains("simulate"));

    let bogus = assort().arg("frobnicate").output().unwrap();
    assert_eq!(code_of(&bogus), 1);

    let missing = assort().args(["solve"]).output().unwrap();
    assert_eq!(code_of(&missing), 1, "missing required flag is a usage error");
}

#[test]
fn rejects_unknown_config_field_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(
        dir.path(),
        "bad.json",
        r#"{
  "instance": {
    "n": 5, "k": 2, "d": 2, "horizon": 60,
    "feature_mode": {"mode": "changing"},
    "seed": 1
  },
  "policy": {"name": "mle-ucb", "omega_typo": 3.0},
  "replications": 2
}"#,
    );
    let out = assort()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code_of(&out), 1);
    let err = stderr_of(&out);
    assert!(err.contains("omega_typo"), "error should name the field: {err}");
    assert!(err.contains("bad.json"), "error should name the file: {err}");
}

#[test]
fn simulate_writes_expected_files_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "run.json", &small_run_config(414));
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for out_dir in [&out_a, &out_b] {
        let out = assort()
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(out_dir)
            .output()
            .unwrap();
        assert_eq!(code_of(&out), 0, "stderr: {}", stderr_of(&out));
        let text = stdout_of(&out);
        assert!(text.contains("final mean cumulative regret:"));
        assert!(text.contains("replications: 2"));
    }

    let expected = [
        "trace_rep000.csv",
        "trace_rep000.meta.json",
        "trace_rep001.csv",
        "trace_rep001.meta.json",
        "aggregate.csv",
    ];
    for name in expected {
        let a = fs::read(out_a.join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "rerun must be byte-identical: {name}");
    }
    let mut names: Vec<_> = fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut want: Vec<_> = expected.iter().map(|s| s.to_string()).collect();
    want.sort();
    assert_eq!(names, want);
}

#[test]
fn simulate_honors_out_dir_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "run.json", &small_run_config(77));
    let out_dir = dir.path().join("from_env");
    let out = assort()
        .args(["simulate", "--config"])
        .arg(&config)
        .env("ASSORT_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_eq!(code_of(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("aggregate.csv").exists());
}

#[test]
fn solve_singleton_matches_closed_form() {
    // one item: estr = 0.6/(1+1) = 0.3, the centered second moment of a
    // single point with weight 1 is 2^2*(1/2 - 1/4) = 1, so ci = 1 and the
    // objective is 0.3 + min(1, 0.5*1) = 0.8
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(
        dir.path(),
        "one.json",
        r#"{"N": 1, "K": 1, "d": 1, "omega": 0.5,
            "utilities": [1.0], "revenues": [0.6], "x": [[2.0]]}"#,
    );
    let out = assort().args(["solve", "--input"]).arg(&input).output().unwrap();
    assert_eq!(code_of(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert_eq!(grab(&text, "assortment:"), "0");
    assert_eq!(grab(&text, "objective:"), "8.00000000e-1");
}

#[test]
fn solve_greedy_equals_brute_without_confidence_term() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(
        dir.path(),
        "revenue_only.json",
        r#"{"N": 8, "K": 3, "d": 2, "omega": 0.0,
            "utilities": [0.4, 2.5, 0.9, 1.7, 0.2, 3.1, 0.6, 1.1],
            "revenues":  [0.74, 0.52, 0.66, 0.58, 0.79, 0.51, 0.62, 0.70],
            "x": [[0.1, -0.4], [0.7, 0.2], [-0.3, 0.5], [0.9, -0.1],
                  [0.0, 0.8], [-0.6, -0.2], [0.4, 0.4], [0.2, -0.7]]}"#,
    );
    let mut answers = Vec::new();
    for solver in ["brute", "greedy"] {
        let out = assort()
            .args(["solve", "--solver", solver, "--input"])
            .arg(&input)
            .output()
            .unwrap();
        assert_eq!(code_of(&out), 0, "{solver} stderr: {}", stderr_of(&out));
        let text = stdout_of(&out);
        let obj: f64 = grab(&text, "objective:").parse().unwrap();
        answers.push((grab(&text, "assortment:"), obj));
    }
    assert_eq!(answers[0].0, answers[1].0);
    assert!((answers[0].1 - answers[1].1).abs() <= 1e-9);
}

#[test]
fn solve_clamps_capacity_above_item_count() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(
        dir.path(),
        "over.json",
        r#"{"N": 2, "K": 5, "d": 1, "omega": 0.0,
            "utilities": [1.2, 0.8], "revenues": [0.6, 0.7],
            "x": [[0.5], [-0.5]]}"#,
    );
    let out = assort().args(["solve", "--input"]).arg(&input).output().unwrap();
    assert_eq!(code_of(&out), 0);
    let err = stderr_of(&out);
    assert!(
        err.contains("capacity 5 exceeds item count 2"),
        "expected clamp warning, got: {err}"
    );
}

#[test]
fn quality_prints_gap_table() {
    let out = assort()
        .args(["quality", "--horizons", "50", "--instances", "3"])
        .output()
        .unwrap();
    assert_eq!(code_of(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "horizon\tmean_gap\tp94\tp96\tp98\tp99\tp99.5"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("50\t"), "row: {row}");
    assert_eq!(row.split('\t').count(), 7);
}

#[test]
fn oracle_check_reports_diagnostics_and_passes_audit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "run.json", &small_run_config(2024));
    let out = assort()
        .args(["oracle-check", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(code_of(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert_eq!(grab(&text, "items:"), "5");
    assert!(text.contains("singleton choice ratio:"));
    assert!(text.contains("audit ok"));
}

#[test]
fn verify_suites_all_pass() {
    let out = assort().arg("verify").output().unwrap();
    assert_eq!(code_of(&out), 0, "stdout: {}", stdout_of(&out));
    let text = stdout_of(&out);
    assert!(!text.contains("FAIL"), "unexpected failure: {text}");
    assert!(text.contains("checks passed"));
}

#[test]
fn verify_catches_injected_sign_error() {
    let out = assort()
        .args(["verify", "--inject-ci-sign-error"])
        .output()
        .unwrap();
    assert_eq!(code_of(&out), 2);
    let text = stdout_of(&out);
    assert!(text.contains("FAIL ci-eigen"), "fault not caught: {text}");
}
