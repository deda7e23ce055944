//! Exit codes and file outputs of the `iodiag` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn iodiag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iodiag")).args(args).arg("--log").arg("warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/corpus")
}

fn write_config(dir: &Path) -> PathBuf {
    let config = serde_json::json!({
        "corpus_root": corpus(),
        "run_dir": "run",
        "fuzz_budget": 4,
        "judge": {"models": [{"id": "len", "backend": {"mock": "yes-if-even-output-len"}}]},
        "predictor": {"n_trees": 20, "min_samples_leaf": 5},
        "sage": {"n_permutations": 16, "background_size": 8, "top_k": 5},
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn usage_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let c = config.to_str().unwrap();
    assert_eq!(code(&iodiag(&["pipeline", "run", "--config", c, "--stage", "bogus"])), 2);
    assert_eq!(code(&iodiag(&["no-such-command"])), 2);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"fuzz_budget": "many"}"#).unwrap();
    assert_eq!(code(&iodiag(&["pipeline", "run", "--config", bad.to_str().unwrap()])), 2);
    let zero = dir.path().join("zero.json");
    fs::write(&zero, r#"{"limits": {"max_output_chars": 0}}"#).unwrap();
    assert_eq!(code(&iodiag(&["pipeline", "run", "--config", zero.to_str().unwrap()])), 2);
}

#[test]
fn stage_before_its_upstream_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = iodiag(&["pipeline", "run", "--config", config.to_str().unwrap(), "--stage", "metrics"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));
}

#[test]
fn full_run_then_standalone_commands() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = iodiag(&["pipeline", "run", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for stage in ["corpus", "metrics", "judge", "predictor", "sage"] {
        assert!(String::from_utf8_lossy(&out.stdout).contains(&format!("{stage}: Ran")));
    }
    assert!(run.join("report/report.md").exists());

    let rerun = iodiag(&["pipeline", "run", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&rerun), 0);
    assert!(!String::from_utf8_lossy(&rerun.stdout).contains(": Ran"));

    let report = iodiag(&["pipeline", "report", "--run", run.to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("## Judge metrics"));

    // rescoring the full feature matrix with the trained model
    let scores = dir.path().join("scores.csv");
    let out = iodiag(&[
        "predict",
        "--model",
        run.join("predictor/len/model.json").to_str().unwrap(),
        "--features",
        run.join("metrics/features.csv").to_str().unwrap(),
        "--records",
        run.join("judge/len/records.jsonl").to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = iodiag(&["auroc", "--scores", scores.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&value));

    // the judge report recomputes what the pipeline stored
    let out = iodiag(&["judge", "report", "--records", run.join("judge/len/records.jsonl").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("judge/len/metrics.json")).unwrap()).unwrap();
    let f1 = stored["metrics"]["f1"].as_f64().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains(&format!("F1 {f1:.3}")));
}

#[test]
fn auroc_without_labels_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.csv");
    fs::write(&scores, "triple_id,score,label\na,0.5,\nb,0.2,1\n").unwrap();
    assert_eq!(code(&iodiag(&["auroc", "--scores", scores.to_str().unwrap()])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&iodiag(&["auroc", "--scores", missing.to_str().unwrap()])), 1);
}
