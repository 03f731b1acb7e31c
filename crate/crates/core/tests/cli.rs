mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use provrec::evaluation::synth::{generate_synthetic, SynthSpec};
use provrec::factorization::load_model;
use provrec::matrix::{load_matrix, save_matrix};
use provrec::{objective, provenance};

fn provrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provrec"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_matrix(dir: &Path) {
    let (m, _) = generate_synthetic(&SynthSpec::desk_scale(3, 0.1, 5)).unwrap();
    save_matrix(&dir.join("m.csv"), &m, None).unwrap();
}

#[test]
fn ingest_counts_match_report() {
    let dir = tempfile::tempdir().unwrap();
    let fx = provenance_fixture(1, 5, 4);
    write_fixture(dir.path(), &fx);
    let o = provrec(dir.path(), &["ingest", "--records", "records.jsonl", "--manifests", "manifests.csv", "--out", "t.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let triplets = provenance::parse_triplets(std::fs::File::open(dir.path().join("t.csv")).unwrap()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.csv.report.json")).unwrap()).unwrap();
    assert_eq!(report["attributed"].as_u64().unwrap() as usize, triplets.len());
    assert_eq!(triplets.len(), fx.expected.len());
    assert_eq!(report["unattributable"].as_u64().unwrap() as usize, fx.zero_overlap.len());
    assert_eq!(report["rejected"].as_u64().unwrap() as usize, fx.malformed_lines);
    assert!(report["run"]["version"].is_string());
    assert!(dir.path().join("t.csv.meta.json").exists());
}

#[test]
fn ingest_missing_file_names_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifests.csv"), "dataset_id,hash\nd,h\n").unwrap();
    let o = provrec(dir.path(), &["ingest", "--records", "nope.jsonl", "--manifests", "manifests.csv", "--out", "t.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.jsonl"));
    assert!(!dir.path().join("t.csv").exists());
}

#[test]
fn ingest_empty_records() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("records.jsonl"), "").unwrap();
    std::fs::write(dir.path().join("manifests.csv"), "dataset_id,hash\nd,h\n").unwrap();
    let o = provrec(dir.path(), &["ingest", "--records", "records.jsonl", "--manifests", "manifests.csv", "--out", "t.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("records 0"));
    let triplets = provenance::parse_triplets(std::fs::File::open(dir.path().join("t.csv")).unwrap()).unwrap();
    assert!(triplets.is_empty());
}

#[test]
fn train_is_byte_identical_and_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    synth_matrix(dir.path());
    let a = provrec(dir.path(), &["train", "--matrix", "m.csv", "--model-out", "a.model", "--seed", "9"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    std::fs::copy(dir.path().join("a.model"), dir.path().join("first.model")).unwrap();
    let b = provrec(dir.path(), &["train", "--matrix", "m.csv", "--model-out", "a.model", "--seed", "9", "--jobs", "1"]);
    assert_eq!(b.status.code(), Some(0));
    let first = std::fs::read(dir.path().join("first.model")).unwrap();
    let second = std::fs::read(dir.path().join("a.model")).unwrap();
    // The embedded flags differ only in --jobs; factor lines must match exactly.
    let body = |bytes: &[u8]| String::from_utf8(bytes.to_vec()).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&first), body(&second));

    let model = load_model(&dir.path().join("a.model")).unwrap();
    let m = load_matrix(&dir.path().join("m.csv")).unwrap();
    let recomputed = objective(&model, &m).unwrap();
    let printed: f64 = stdout(&a)
        .lines()
        .find_map(|l| l.strip_prefix("objective "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(printed, recomputed);
}

#[test]
fn train_rejects_zero_rank() {
    let dir = tempfile::tempdir().unwrap();
    synth_matrix(dir.path());
    let o = provrec(dir.path(), &["train", "--matrix", "m.csv", "--model-out", "x", "--rank", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn recommend_table() {
    let dir = tempfile::tempdir().unwrap();
    synth_matrix(dir.path());
    assert!(provrec(dir.path(), &["train", "--matrix", "m.csv", "--model-out", "m.model"]).status.success());
    let o = provrec(
        dir.path(),
        &["recommend", "--model", "m.model", "--dataset", "dataset-003", "--top-n", "10", "--threshold", "1.2", "--out", "r.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.len() <= 10);
    let scores: Vec<f64> = rows.iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(scores.iter().all(|&s| s >= 1.2));
    assert_eq!(std::fs::read_to_string(dir.path().join("r.csv")).unwrap(), text);

    let o = provrec(dir.path(), &["recommend", "--model", "m.model", "--dataset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = provrec(dir.path(), &["recommend", "--model", "m.model", "--pipeline", "pipeline-001", "--top-n", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn evaluate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = generate_synthetic(&SynthSpec::desk_scale(3, 0.1, 5)).unwrap();
    save_matrix(&dir.path().join("m.csv"), &m, None).unwrap();
    std::fs::write(dir.path().join("survey.csv"), survey_csv(&m, 3)).unwrap();
    let o = provrec(dir.path(), &["evaluate", "--matrix", "m.csv", "--survey", "survey.csv", "--out-dir", "ev"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("baseline_auc "));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ev/report.json")).unwrap()).unwrap();
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(report["per_fold_auc"].as_array().unwrap().len(), 10);
    assert!(report["baseline"]["auc"].is_f64());
    assert_eq!(report["run"]["seed"], 0);
    let roc = std::fs::read_to_string(dir.path().join("ev/roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr,tp,fp,tn,fn\n"));
    assert!(dir.path().join("ev/baseline_roc.csv").exists());

    let o = provrec(dir.path(), &["evaluate", "--matrix", "m.csv", "--k-folds", "1000"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_accepts_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let fx = provenance_fixture(4, 8, 6);
    write_fixture(dir.path(), &fx);
    assert!(provrec(dir.path(), &["ingest", "--records", "records.jsonl", "--manifests", "manifests.csv", "--out", "t.csv"]).status.success());
    let o = provrec(dir.path(), &["evaluate", "--matrix", "t.csv", "--k-folds", "5", "--rank", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn roc_command() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "score,label\n0.9,2\n0.8,1\n0.7,2\n0.1,1\n").unwrap();
    let o = provrec(dir.path(), &["roc", "--scores", "s.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("# auc 7.5"));
    std::fs::write(dir.path().join("bad.csv"), "score,label\n0.9,3\n").unwrap();
    assert_eq!(provrec(dir.path(), &["roc", "--scores", "bad.csv"]).status.code(), Some(2));
}

#[test]
fn predict_and_synth() {
    let dir = tempfile::tempdir().unwrap();
    let o = provrec(dir.path(), &["synth", "--out", "m.csv", "--seed", "4", "--noise", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("entries 288"));
    assert!(dir.path().join("m.csv.truth.json").exists());
    assert!(provrec(dir.path(), &["train", "--matrix", "m.csv", "--model-out", "m.model"]).status.success());
    let o = provrec(dir.path(), &["predict", "--model", "m.model", "--pipeline", "pipeline-000", "--dataset", "dataset-000"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn help_documents_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = provrec(dir.path(), &["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    for flag in ["--rank", "--lambda", "--max-iterations", "--tolerance", "--seed", "--weighted-lambda", "--jobs"] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
}
