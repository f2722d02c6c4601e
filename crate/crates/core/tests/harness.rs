use proptest::prelude::*;

use capfusion::data::{ActivityScheme, ClapConfig, SchemeName};
use capfusion::harness::{
    aggregate, make_loso_folds, prepare_sessions, run_experiment, run_fold, ConfusionMatrix, ExperimentConfig,
    Fingerprint, FoldResult, HarnessError, MetricTriplet, PreparedSession, RawSession, TrainConfig,
};
use capfusion::models::{Architecture, Fusion, FusionModel, ModelSpec};
use capfusion::synth::{generate_corpus, write_corpus, SeparabilityMode, SynthConfig};

fn small_corpus(sessions: usize, seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::four_activity(SeparabilityMode::Both, seed);
    cfg.sessions.count = sessions;
    cfg
}

fn prepared(cfg: &SynthConfig) -> Vec<PreparedSession> {
    let raw: Vec<RawSession> = generate_corpus(cfg)
        .unwrap()
        .sessions
        .into_iter()
        .map(|s| RawSession { session_id: s.session_id, recordings: s.recordings, labels: s.labels })
        .collect();
    let scheme = ActivityScheme::builtin(SchemeName::Posture4);
    prepare_sessions(&raw, &scheme, 1.0, 0.2, &ClapConfig::default()).unwrap()
}

fn tiny_spec(sessions: &[PreparedSession]) -> ModelSpec {
    let ds = &sessions[0].dataset;
    let mut spec = ModelSpec::new(Architecture::McCnn, Fusion::LateFeature, 4, ds.window_len, &ds.channel_layout);
    spec.hyper.filters = Some(vec![4, 4, 4]);
    spec.hyper.bcs_filters = 2;
    spec.hyper.dense_hidden = 8;
    spec
}

fn tiny_train() -> TrainConfig {
    TrainConfig { learning_rate: 1e-3, batch_size: 32, max_epochs: 2, patience: 2, ..Default::default() }
}

fn weights(model: &FusionModel) -> Vec<u8> {
    let mut bytes = Vec::new();
    model.save(&mut bytes).unwrap();
    bytes
}

#[test]
fn test_windows_never_reach_training() {
    let sessions = prepared(&small_corpus(3, 4));
    let spec = tiny_spec(&sessions);
    let ids: Vec<String> = sessions.iter().map(|s| s.session_id.clone()).collect();
    let fold = make_loso_folds(&ids).unwrap().folds[0].clone();
    let base = run_fold(&spec, &sessions, &fold, &tiny_train(), 21).unwrap();

    let mut poisoned = sessions.clone();
    let test = poisoned.iter_mut().find(|s| s.session_id == fold.test).unwrap();
    for w in &mut test.dataset.windows {
        w.data.data_mut().iter_mut().for_each(|v| *v = 7.0 - 3.0 * *v);
        w.label = (w.label + 1) % 4;
    }
    let again = run_fold(&spec, &poisoned, &fold, &tiny_train(), 21).unwrap();
    assert_eq!(weights(&again.model), weights(&base.model));
    assert_eq!(again.normalizer, base.normalizer);
    assert_eq!(again.result.best_epoch, base.result.best_epoch);

    // the same edit to a training session does move the weights
    let mut shifted = sessions.clone();
    let train = shifted.iter_mut().find(|s| s.session_id == fold.train[0]).unwrap();
    train.dataset.windows[0].data.data_mut()[0] += 1.0;
    let moved = run_fold(&spec, &shifted, &fold, &tiny_train(), 21).unwrap();
    assert_ne!(weights(&moved.model), weights(&base.model));
}

#[test]
fn fold_parallelism_does_not_change_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_corpus(3, 8);
    write_corpus(&generate_corpus(&synth).unwrap(), &synth, tmp.path()).unwrap();
    let mut cfg = ExperimentConfig {
        data: tmp.path().to_path_buf(),
        scheme: SchemeName::Posture4,
        architecture: Architecture::DeepConvLSTM,
        fusion: Fusion::EarlyData,
        step_s: 0.2,
        seed: 5,
        train: tiny_train(),
        ..Default::default()
    };
    cfg.hyper.filters = Some(vec![4, 4]);
    cfg.hyper.lstm_hidden = 6;
    let serial = run_experiment(&cfg).unwrap();
    cfg.jobs = 3;
    let parallel = run_experiment(&cfg).unwrap();
    assert_eq!(serial.to_json(), parallel.to_json());
    assert_eq!(serial.fingerprint, cfg.fingerprint());
    let tests: Vec<&str> = serial.per_fold.iter().map(|f| f.test_session.as_str()).collect();
    assert_eq!(tests, ["S1", "S2", "S3"]);
}

#[test]
fn two_sessions_are_too_few() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_corpus(2, 1);
    write_corpus(&generate_corpus(&synth).unwrap(), &synth, tmp.path()).unwrap();
    let cfg = ExperimentConfig { data: tmp.path().to_path_buf(), ..Default::default() };
    assert!(matches!(run_experiment(&cfg), Err(HarnessError::TooFewSessions(2))));
}

fn fold(i: usize, m: MetricTriplet) -> FoldResult {
    FoldResult {
        fold: i,
        test_session: format!("S{}", i + 1),
        val_session: format!("S{}", (i + 1) % 5 + 1),
        train_sessions: vec![],
        metrics: m,
        confusion: ConfusionMatrix::new(2),
        best_epoch: 1,
        epochs_run: 1,
        warnings: vec![],
    }
}

/// Welford's running mean and variance.
fn welford(values: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in values.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, (m2 / (values.len() - 1) as f64).sqrt())
}

fn triplet() -> impl Strategy<Value = MetricTriplet> {
    (0.0f64..=1.0, 0.0f64..=1.0, prop::option::weighted(0.8, 0.0f64..=1.0))
        .prop_map(|(accuracy, macro_f1, walking_recall)| MetricTriplet { accuracy, macro_f1, walking_recall })
}

proptest! {
    #[test]
    fn five_fold_aggregate_matches_oracle(ms in prop::collection::vec(triplet(), 5)) {
        let fp = Fingerprint { scheme: SchemeName::Posture4, architecture: Architecture::McCnn, fusion: Fusion::LateFeature, seed: 0 };
        let mut folds: Vec<FoldResult> = ms.iter().enumerate().map(|(i, &m)| fold(i, m)).collect();
        folds.reverse();
        let report = aggregate(fp, folds).unwrap();
        prop_assert!(report.per_fold.iter().enumerate().all(|(i, f)| f.fold == i));

        let pct = |f: fn(&MetricTriplet) -> Option<f64>| -> Vec<f64> { ms.iter().filter_map(f).map(|v| v * 100.0).collect() };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let (m, s) = welford(&pct(|m| Some(m.accuracy)));
        prop_assert!(close(report.mean.accuracy, m) && close(report.std.accuracy, s));
        let (m, s) = welford(&pct(|m| Some(m.macro_f1)));
        prop_assert!(close(report.mean.macro_f1, m) && close(report.std.macro_f1, s));
        let walks = pct(|m| m.walking_recall);
        if walks.len() >= 2 {
            let (m, s) = welford(&walks);
            prop_assert!(close(report.mean.walking_recall.unwrap(), m) && close(report.std.walking_recall.unwrap(), s));
        } else {
            prop_assert!(report.mean.walking_recall.is_none() && report.std.walking_recall.is_none());
        }
    }
}
