use std::path::Path;
use std::process::{Command, Output};

use kan_ausculta::report::RunReport;
use kan_ausculta::synthetic::write_audio_corpus;

const SMALL: &str = "\
model.lstm_hidden = 8
model.kan_hidden = 6
train.max_epochs = 3
stage1.epochs = 1
";

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kan-ausculta"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("KAN_AUSCULTA_CACHE")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_on_wav_corpus_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("audio");
    let table = write_audio_corpus(&audio, 10, 0.4, 3).unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let o = cli(&[
        "train", "--data", p(&audio), "--diagnosis", p(&table), "--out", p(&out), "--config", p(&cfg),
        "--preset", "full", "--folds", "3", "--jobs", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for f in ["report.json", "folds.csv", "confusion.csv", "per_class.csv", "calibration.csv", "splines.csv", "index.json", "features.bin"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let folds = std::fs::read_to_string(out.join("folds.csv")).unwrap();
    let lines: Vec<&str> = folds.lines().collect();
    assert_eq!(lines.len(), 1 + 3 + 2);
    assert!(lines[4].starts_with("mean,") && lines[5].starts_with("std,"));

    let confusion = std::fs::read_to_string(out.join("confusion.csv")).unwrap();
    for row in confusion.lines().skip(1) {
        let total: u64 = row.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(total, 10, "row {row}");
    }

    let report = RunReport::load(&out.join("report.json")).unwrap();
    assert_eq!(report.feature_dim, 1927);
    assert_eq!(report.oof.len(), 60);
    assert!(report.oof.windows(2).all(|w| w[0].index < w[1].index));

    let splines = dir.path().join("splines");
    let o = cli(&["export-splines", "--model", p(&out.join("model_fold0.json")), "--out", p(&splines)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(splines.join("splines.csv")).unwrap();
    assert!(csv.starts_with("layer,out_index,in_index,x,phi"));
    // 8*2 -> 6 and 6 -> 6 edges, 101 samples each.
    assert_eq!(csv.lines().count() - 1, (16 * 6 + 6 * 6) * 101);
}

#[test]
fn synthetic_training_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let mut reports = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("run{jobs}"));
        let o = cli(&[
            "train", "--synthetic", "--out", p(&out), "--config", p(&cfg), "--folds", "3", "--seed", "9", "--jobs", jobs,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&cli(&["no-such-command"])), 1);
    assert_eq!(code(&cli(&["train", "--synthetic"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&cli(&["train", "--synthetic", "--out", p(&out), "--preset", "bogus"])), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "focal.gama = 2.0\n").unwrap();
    assert_eq!(code(&cli(&["train", "--synthetic", "--out", p(&out), "--config", p(&bad)])), 1);
    std::fs::write(&bad, "focal.gamma = \"two\"\n").unwrap();
    assert_eq!(code(&cli(&["train", "--synthetic", "--out", p(&out), "--config", p(&bad)])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("diag.txt");
    std::fs::write(&table, "101 COPD\n").unwrap();
    let missing = dir.path().join("missing");
    let o = cli(&["ingest", "--data", p(&missing), "--diagnosis", p(&table), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    let o = cli(&["export-splines", "--model", p(&dir.path().join("none.json")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ingest_reports_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("audio");
    let table = write_audio_corpus(&audio, 10, 0.1, 1).unwrap();
    let out = dir.path().join("idx");
    let o = cli(&["ingest", "--data", p(&audio), "--diagnosis", p(&table), "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("60 recordings indexed"), "{stdout}");
    assert!(out.join("index.json").exists());
}

#[test]
fn gradcheck_subcommand_passes() {
    let o = cli(&["gradcheck", "--instances", "4", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradient check passed"));
}
