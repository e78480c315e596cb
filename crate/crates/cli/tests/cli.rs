use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn abpsynth(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abpsynth"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Synthesizes `n` records and preprocesses them into `dir/corpus`.
fn corpus(dir: &Path, n: &str) {
    let out = abpsynth(&["synth-data", "--n", n, "--seed", "3", "--out", "data"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = abpsynth(&["preprocess", "--data", "data", "--out", "corpus"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn synth_data_writes_records_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out_dir in ["a", "b"] {
        let out = abpsynth(
            &["synth-data", "--n", "6", "--seed", "7", "--mapping", "linear-dct", "--out", out_dir],
            dir,
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let manifest = read_json(&dir.join("a/manifest.json"));
    assert_eq!(manifest["records"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["format"], "clb1");
    for entry in std::fs::read_dir(dir.join("a")).unwrap() {
        let path = entry.unwrap().path();
        let twin = dir.join("b").join(path.file_name().unwrap());
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(twin).unwrap());
    }
    let out = abpsynth(&["synth-data", "--n", "2", "--format", "csv", "--out", "c"], dir);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&dir.join("c/manifest.json"))["format"], "csv");
}

#[test]
fn bad_flag_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = abpsynth(&["synth-data", "--mapping", "bogus"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--mapping"));
    let out = abpsynth(&["synth-data", "--len", "100", "--out", "x"], tmp.path());
    assert_eq!(code(&out), 2);
    let out = abpsynth(&["preprocess", "--data", "missing"], tmp.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn inconsistent_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.toml"), "[transformer]\nseq_len = 200\n").unwrap();
    let out = abpsynth(&["--config", "run.toml", "synth-data", "--out", "d"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("seq_len"));
    std::fs::write(tmp.path().join("typo.toml"), "sed = 1\n").unwrap();
    let out = abpsynth(&["--config", "typo.toml", "synth-data", "--out", "d"], tmp.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn preprocess_reports_four_segments_per_record() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path(), "10");
    let report = read_json(&tmp.path().join("corpus/preprocess_report.json"));
    assert_eq!(report["records"], 10);
    assert_eq!(report["segments"], 40);
    for pair in report["segments_per_record"].as_array().unwrap() {
        assert_eq!(pair[1], 4);
    }
    let manifest = read_json(&tmp.path().join("corpus/segments.json"));
    let first = &manifest["segments"][0];
    for key in ["ppg", "abp"] {
        assert!(first[key]["mu"].is_number() && first[key]["sigma"].is_number());
    }
}

#[test]
fn fully_rejected_corpus_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("strict.toml"), "[preprocess.artifacts]\nabp_max_mmhg = 50.0\n").unwrap();
    assert_eq!(code(&abpsynth(&["synth-data", "--n", "3", "--out", "data"], dir)), 0);
    let out = abpsynth(&["--config", "strict.toml", "preprocess", "--data", "data"], dir);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("rejected"));
}

#[test]
fn reference_model_is_perfect_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "20");
    let out = abpsynth(
        &["evaluate", "--corpus", "corpus", "--model-kind", "reference", "--plot", "4", "--out", "ev"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.join("ev/eval_report.json"));
    assert_eq!(report["waveform"]["mae"], 0.0);
    assert_eq!(report["sbp"]["mae"], 0.0);
    assert_eq!(report["bhs"]["sbp"]["grade"], "A");
    assert_eq!(report["bhs"]["dbp"]["grade"], "A");
    assert_eq!(report["aami"]["sbp_pass"], true);
    let files: Vec<String> = std::fs::read_dir(dir.join("ev"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(files.iter().filter(|f| f.ends_with(".svg")).count(), 4);
    assert_eq!(files.iter().filter(|f| f.ends_with(".csv")).count(), 4);
}

#[test]
fn fd_train_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "20");
    let out = abpsynth(&["train-fd", "--corpus", "corpus", "--lambda-grid", "0.01,1,100"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.join("fd_model/fd_report.json"));
    assert_eq!(report["report"]["lambda_grid"].as_array().unwrap().len(), 3);
    let out = abpsynth(&["evaluate", "--corpus", "corpus", "--model", "fd_model", "--out", "ev"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.join("ev/eval_report.json"));
    assert_eq!(report["model_digest"].as_str().unwrap().len(), 64);
    assert!(report["waveform"]["mae"].as_f64().unwrap() < 5.0);
    assert_eq!(report["denorm_mode"], "reference-stats");

    let out = abpsynth(&["evaluate", "--corpus", "corpus", "--model", "nowhere.json"], dir);
    assert_eq!(code(&out), 2);
    let out = abpsynth(&["evaluate", "--corpus", "corpus"], dir);
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_training_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "4");
    let out = abpsynth(
        &[
            "train-tx", "--corpus", "corpus", "--epochs", "2", "--batch-size", "2", "--max-train", "2",
            "--learning-rate", "1e300",
        ],
        dir,
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn param_count_checks_table1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = abpsynth(&["param-count", "--check-table1", "--out", "counts.json"], tmp.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("520513"));
    let counts = read_json(&tmp.path().join("counts.json"));
    assert_eq!(counts.as_array().unwrap().len(), 14);
    let out = abpsynth(&["param-count", "--d-model", "32", "--check-table1"], tmp.path());
    assert_eq!(code(&out), 5);
    let out = abpsynth(&["param-count", "--d-model", "32"], tmp.path());
    assert_eq!(code(&out), 0);
}

#[test]
fn grade_reads_json_or_plain_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("e.json"), "[1.0, -2.0, 3.0, 20.0]").unwrap();
    std::fs::write(dir.join("e.txt"), "1.0 -2.0\n3.0,20.0\n").unwrap();
    let a = abpsynth(&["grade", "--errors", "e.json"], dir);
    let b = abpsynth(&["grade", "--errors", "e.txt"], dir);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["bhs"]["p5"], 75.0);
    assert_eq!(v["stats"]["n"], 4);
    std::fs::write(dir.join("bad.txt"), "1.0 nope").unwrap();
    assert_eq!(code(&abpsynth(&["grade", "--errors", "bad.txt"], dir)), 2);
}

#[test]
fn plot_renders_svg_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("s.csv"), "sample,reference,synthesized\n0,80,81\n1,120,118\n2,95,96\n").unwrap();
    let out = abpsynth(&["plot", "--input", "s.csv", "--title", "demo"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = std::fs::read_to_string(dir.join("s.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("demo"));
    std::fs::write(dir.join("bad.csv"), "a,b\n").unwrap();
    assert_eq!(code(&abpsynth(&["plot", "--input", "bad.csv"], dir)), 2);
}
