use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capfusion::data::SchemeName;
use capfusion::harness::{aggregate, Comparison, ConfusionMatrix, ExperimentReport, Fingerprint, FoldResult, MetricTriplet};
use capfusion::models::{Architecture, Fusion};
use capfusion::synth::{SeparabilityMode, SynthConfig};

fn capfusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capfusion")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Relative path → bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn synth_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = capfusion(&["synth", "--preset", "joint", "--seed", "11", "--out", p(dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.keys().any(|k| k.ends_with("S5/labels.json")));
    assert!(ta.keys().any(|k| k.ends_with("S1/left.csv")));
    assert_eq!(ta, tb);

    let c = tmp.path().join("c");
    let out = capfusion(&["synth", "--preset", "joint", "--seed", "12", "--out", p(&c)]);
    assert_eq!(code(&out), 0);
    assert_ne!(tree(&c), ta);
}

#[test]
fn synth_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::four_activity(SeparabilityMode::BcsDiscriminative, 2);
    cfg.sessions.count = 3;
    let path = tmp.path().join("synth.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out_dir = tmp.path().join("corpus");
    let out = capfusion(&["synth", "--config", p(&path), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_dir(out_dir.join("sessions")).unwrap().count(), 3);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = capfusion(&["synth", "--config", p(&missing), "--out", p(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    assert_eq!(code(&capfusion(&["run", "--config", p(&missing)])), 2);
    assert_eq!(code(&capfusion(&["run", "--scheme", "nine"])), 2);
    assert_eq!(code(&capfusion(&["run", "--fusion", "middle"])), 2);
    assert_eq!(code(&capfusion(&["frobnicate"])), 2);

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"scheme": "binary2", "learning_rate": 3}"#).unwrap();
    assert_eq!(code(&capfusion(&["run", "--config", p(&bad)])), 2);
}

#[test]
fn missing_corpus_is_a_pipeline_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = capfusion(&["run", "--data", p(&tmp.path().join("absent")), "--scheme", "binary2"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

fn report(scheme: SchemeName, fusion: Fusion, accs: &[f64]) -> ExperimentReport {
    let folds = accs
        .iter()
        .enumerate()
        .map(|(i, &a)| FoldResult {
            fold: i,
            test_session: format!("S{}", i + 1),
            val_session: format!("S{}", (i + 1) % accs.len() + 1),
            train_sessions: vec![],
            metrics: MetricTriplet { accuracy: a, macro_f1: a - 0.05, walking_recall: Some(a) },
            confusion: ConfusionMatrix::new(2),
            best_epoch: 2,
            epochs_run: 4,
            warnings: vec![],
        })
        .collect();
    let fp = Fingerprint { scheme, architecture: Architecture::McCnn, fusion, seed: 3 };
    aggregate(fp, folds).unwrap()
}

#[test]
fn compare_keeps_source_means() {
    let tmp = tempfile::tempdir().unwrap();
    let with = report(SchemeName::Binary2, Fusion::LateFeature, &[0.9, 0.95, 0.97]);
    let without = report(SchemeName::Binary2, Fusion::ImuOnly, &[0.6, 0.7, 0.65]);
    let (a, b) = (tmp.path().join("with.json"), tmp.path().join("without.json"));
    with.write(&a).unwrap();
    without.write(&b).unwrap();
    let merged_path = tmp.path().join("cmp.json");
    let out = capfusion(&["compare", p(&a), p(&b), "--out", p(&merged_path)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("MC-CNN Feature Fusion") && text.contains("MC-CNN IMU Only"));

    let merged: Comparison = serde_json::from_str(&std::fs::read_to_string(&merged_path).unwrap()).unwrap();
    assert_eq!(merged.columns.len(), 2);
    for (col, src) in merged.columns.iter().zip([&with, &without]) {
        assert_eq!(col.mean, src.mean);
        assert_eq!(col.std, src.std);
        assert_eq!(col.fingerprint, src.fingerprint);
    }
}

#[test]
fn compare_rejects_mixed_schemes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    report(SchemeName::Binary2, Fusion::LateFeature, &[0.9, 0.8]).write(&a).unwrap();
    report(SchemeName::Posture4, Fusion::ImuOnly, &[0.6, 0.7]).write(&b).unwrap();
    let out = capfusion(&["compare", p(&a), p(&b)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scheme mismatch"));
}

#[test]
fn gradcheck_reports_every_case() {
    let out = capfusion(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for case in ["Conv1D", "BatchNorm1D", "MaxPool1D", "Dense", "LSTM", "MC-CNN", "DeepConvLSTM"] {
        assert!(text.lines().any(|l| l.starts_with(case)), "{case} missing:\n{text}");
    }
    assert!(text.lines().last().unwrap().starts_with("PASS"));
    assert_eq!(code(&capfusion(&["gradcheck", "--seeds", "0"])), 2);
}
