use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{make_loso_folds, Fold};
use super::metrics::evaluate;
use super::report::{aggregate, ExperimentReport, Fingerprint, FoldResult};
use super::train::{train, TrainConfig};
use super::{HarnessError, Result};
use crate::data::{
    align_devices, apply_scheme, detect_clap_sync, segment_windows, ActivityScheme, ClapConfig, DataError, LabelTrack,
    Normalizer, SchemeName, SensorRecording, WindowDataset,
};
use crate::models::{build_model, Architecture, Fusion, FusionModel, ModelHyper, ModelSpec};

/// Everything `run` needs. Loaded from JSON with every field optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus root holding `sessions/<id>/<device>.csv` and `labels.json`.
    pub data: PathBuf,
    pub scheme: SchemeName,
    /// Replaces the built-in posture4 mapping (posture3 derives from it).
    pub posture_mapping: Option<PathBuf>,
    pub architecture: Architecture,
    pub fusion: Fusion,
    pub hyper: ModelHyper,
    /// `seed` inside is ignored; each fold derives its own from the experiment seed.
    pub train: TrainConfig,
    pub window_s: f64,
    pub step_s: f64,
    pub clap: ClapConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Folds run concurrently on this many threads.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("."),
            scheme: SchemeName::Full12,
            posture_mapping: None,
            architecture: Architecture::McCnn,
            fusion: Fusion::LateFeature,
            hyper: ModelHyper::default(),
            train: TrainConfig::default(),
            window_s: 1.0,
            step_s: 0.04,
            clap: ClapConfig::default(),
            seed: 0,
            out: None,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Data(DataError::Json(e)))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.step_s > 0.0) {
            return Err(HarnessError::InvalidConfig("window_s and step_s must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(HarnessError::InvalidConfig("jobs must be at least 1".into()));
        }
        self.train.validate()
    }

    pub fn activity_scheme(&self) -> Result<ActivityScheme> {
        Ok(match &self.posture_mapping {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
                let posture = ActivityScheme::from_mapping_json("posture4", &text)?;
                ActivityScheme::builtin_with_posture(self.scheme, &posture)
            }
            None => ActivityScheme::builtin(self.scheme),
        })
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint { scheme: self.scheme, architecture: self.architecture, fusion: self.fusion, seed: self.seed }
    }
}

/// One session as stored on disk.
#[derive(Clone, Debug)]
pub struct RawSession {
    pub session_id: String,
    pub recordings: Vec<SensorRecording>,
    pub labels: LabelTrack,
}

/// One session, synced and cut into labeled windows.
#[derive(Clone, Debug)]
pub struct PreparedSession {
    pub session_id: String,
    pub rate_hz: f64,
    pub dataset: WindowDataset,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Chunk {
    Num(u64),
    Text(String),
}

/// Orders "S2" before "S10".
fn natural_key(s: &str) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(c) = rest.chars().next() {
        let digit = c.is_ascii_digit();
        let end = rest.find(|ch: char| ch.is_ascii_digit() != digit).unwrap_or(rest.len());
        let (head, tail) = rest.split_at(end);
        out.push(match head.parse() {
            Ok(n) if digit => Chunk::Num(n),
            _ => Chunk::Text(head.to_string()),
        });
        rest = tail;
    }
    out
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| DataError::io(dir, err)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    entries.sort_by_cached_key(|p| natural_key(&p.file_name().unwrap_or_default().to_string_lossy()));
    Ok(entries)
}

/// Reads `root/sessions/*/`: every `.csv` is one device, `labels.json` the annotations.
/// Sessions come back in natural order of their directory names.
pub fn load_sessions(root: impl AsRef<Path>) -> Result<Vec<RawSession>> {
    let dir = root.as_ref().join("sessions");
    let mut sessions = Vec::new();
    for path in sorted_entries(&dir)?.into_iter().filter(|p| p.is_dir()) {
        let session_id = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let wrap = |source| HarnessError::Session { session: session_id.clone(), source };
        let recordings = sorted_entries(&path)?
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(SensorRecording::read_csv)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wrap)?;
        if recordings.is_empty() {
            return Err(wrap(DataError::Invalid(format!("no device CSV files in {}", path.display()))));
        }
        let labels = LabelTrack::read(path.join("labels.json")).map_err(wrap)?;
        sessions.push(RawSession { session_id, recordings, labels });
    }
    if sessions.is_empty() {
        return Err(DataError::Invalid(format!("no session directories under {}", dir.display())).into());
    }
    Ok(sessions)
}

fn prepare_one(
    raw: &RawSession,
    scheme: &ActivityScheme,
    window_s: f64,
    step_s: f64,
    clap: &ClapConfig,
) -> std::result::Result<PreparedSession, DataError> {
    let firsts = raw
        .recordings
        .iter()
        .map(|r| detect_clap_sync(r, clap).map(|s| s.first_clap()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stream = align_devices(&raw.recordings, &firsts)?;
    let rate = stream.rate_hz;
    let window_len = (window_s * rate).round().max(1.0) as usize;
    let step = (step_s * rate).round().max(1.0) as usize;
    let track = apply_scheme(&raw.labels, scheme);
    let dataset = segment_windows(&stream, &track, window_len, step);
    Ok(PreparedSession { session_id: raw.session_id.clone(), rate_hz: rate, dataset })
}

/// Turns each raw session into windows. All sessions must
/// share one rate and one merged channel layout.
pub fn prepare_sessions(
    raw: &[RawSession],
    scheme: &ActivityScheme,
    window_s: f64,
    step_s: f64,
    clap: &ClapConfig,
) -> Result<Vec<PreparedSession>> {
    let prepared = raw
        .par_iter()
        .map(|r| {
            prepare_one(r, scheme, window_s, step_s, clap)
                .map_err(|source| HarnessError::Session { session: r.session_id.clone(), source })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = &prepared[0];
    for p in &prepared[1..] {
        if p.rate_hz != first.rate_hz || p.dataset.channel_layout != first.dataset.channel_layout {
            return Err(HarnessError::Session {
                session: p.session_id.clone(),
                source: DataError::Invalid(format!(
                    "rate or channel layout differs from session {}",
                    first.session_id
                )),
            });
        }
    }
    Ok(prepared)
}

/// Seeds for model initialization and training in one fold.
fn fold_seeds(seed: u64, fold: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    (rng.next_u64(), rng.next_u64())
}

/// A trained fold with its model and the train-set normalizer.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub result: FoldResult,
    pub model: FusionModel,
    pub normalizer: Normalizer,
}

fn gather(sessions: &[PreparedSession], ids: &[String]) -> Option<WindowDataset> {
    let parts = ids
        .iter()
        .filter_map(|id| sessions.iter().find(|s| &s.session_id == id))
        .map(|s| s.dataset.clone())
        .collect();
    WindowDataset::concat(parts)
}

/// Normalizes with train statistics, trains with early stopping on the
/// validation session, then scores the test session.
pub fn run_fold(
    spec: &ModelSpec,
    sessions: &[PreparedSession],
    fold: &Fold,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<FoldRun> {
    let missing = |what| HarnessError::EmptyDataset(what);
    let mut train_ds = gather(sessions, &fold.train).ok_or(missing("training"))?;
    let mut val_ds = gather(sessions, std::slice::from_ref(&fold.val)).ok_or(missing("validation"))?;
    let mut test_ds = gather(sessions, std::slice::from_ref(&fold.test)).ok_or(missing("test"))?;
    let normalizer = Normalizer::fit(&train_ds)?;
    for ds in [&mut train_ds, &mut val_ds, &mut test_ds] {
        normalizer.apply_in_place(ds)?;
    }
    let (model_seed, train_seed) = fold_seeds(seed, fold.index);
    let mut spec = spec.clone();
    spec.seed = model_seed;
    let cfg = TrainConfig { seed: train_seed, ..train_cfg.clone() };
    let trained = train(build_model(&spec)?, &train_ds, &val_ds, &cfg)?;
    let eval = evaluate(&trained.model, &test_ds)?;
    let mut warnings: Vec<String> = test_ds.warnings.clone();
    warnings.extend(eval.warnings);
    Ok(FoldRun {
        result: FoldResult {
            fold: fold.index,
            test_session: fold.test.clone(),
            val_session: fold.val.clone(),
            train_sessions: fold.train.clone(),
            metrics: eval.metrics,
            confusion: eval.confusion,
            best_epoch: trained.history.best_epoch,
            epochs_run: trained.history.epochs.len(),
            warnings,
        },
        model: trained.model,
        normalizer,
    })
}

/// The model spec an experiment trains, validated against the corpus layout.
pub fn experiment_spec(cfg: &ExperimentConfig, scheme: &ActivityScheme, sessions: &[PreparedSession]) -> Result<ModelSpec> {
    let ds = &sessions[0].dataset;
    let mut spec = ModelSpec::new(cfg.architecture, cfg.fusion, scheme.num_labels(), ds.window_len, &ds.channel_layout);
    spec.hyper = cfg.hyper.clone();
    spec.validate()?;
    Ok(spec)
}

/// Loads the corpus and runs the full leave-one-session-out experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let scheme = cfg.activity_scheme()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        let raw = load_sessions(&cfg.data)?;
        let sessions = prepare_sessions(&raw, &scheme, cfg.window_s, cfg.step_s, &cfg.clap)?;
        let spec = experiment_spec(cfg, &scheme, &sessions)?;
        let ids: Vec<String> = sessions.iter().map(|s| s.session_id.clone()).collect();
        let plan = make_loso_folds(&ids)?;
        log::info!(
            "{} sessions, {} folds, {} channels, window {} samples",
            ids.len(),
            plan.folds.len(),
            spec.input_layout.len(),
            spec.window_len
        );
        let results = plan
            .folds
            .par_iter()
            .map(|fold| {
                let run = run_fold(&spec, &sessions, fold, &cfg.train, cfg.seed).map_err(|e| HarnessError::Fold {
                    fold: fold.index,
                    session: fold.test.clone(),
                    source: Box::new(e),
                })?;
                log::info!(
                    "fold {} (test {}): accuracy {:.4}, macro F1 {:.4}",
                    fold.index,
                    fold.test,
                    run.result.metrics.accuracy,
                    run.result.metrics.macro_f1
                );
                Ok(run.result)
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate(cfg.fingerprint(), results)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_order() {
        let mut v = vec!["S10", "S2", "S1", "a", "S02b"];
        v.sort_by_key(|s| natural_key(s));
        assert_eq!(v, ["S1", "S2", "S02b", "S10", "a"]);
    }

    #[test]
    fn fold_seeds_differ() {
        assert_ne!(fold_seeds(1, 0), fold_seeds(1, 1));
        assert_eq!(fold_seeds(1, 3), fold_seeds(1, 3));
    }

    #[test]
    fn config_defaults_fill_missing_fields() {
        let cfg = ExperimentConfig::from_json(r#"{"scheme": "binary2", "fusion": "ImuOnly", "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(cfg.scheme, SchemeName::Binary2);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, 128);
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
