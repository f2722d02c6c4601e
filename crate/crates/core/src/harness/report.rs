use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, MetricTriplet};
use super::{HarnessError, Result};
use crate::data::{DataError, SchemeName};
use crate::models::{Architecture, Fusion};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub scheme: SchemeName,
    pub architecture: Architecture,
    pub fusion: Fusion,
    pub seed: u64,
}

impl Fingerprint {
    /// Column heading such as "MC-CNN Feature Fusion".
    pub fn column_label(&self) -> String {
        format!("{} {}", self.architecture.display_name(), self.fusion.display_name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_session: String,
    pub val_session: String,
    pub train_sessions: Vec<String>,
    /// Fractions in [0, 1].
    pub metrics: MetricTriplet,
    pub confusion: ConfusionMatrix,
    pub best_epoch: usize,
    pub epochs_run: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Percentages. Walking recall is `None` when fewer than two folds report it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub walking_recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub fingerprint: Fingerprint,
    pub per_fold: Vec<FoldResult>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Data(DataError::Json(e)))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| DataError::io(path, e).into())
    }
}

/// Mean and `n − 1` standard deviation.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// `"65.00 ± 7.07"` from percentages.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

pub fn aggregate(fingerprint: Fingerprint, mut folds: Vec<FoldResult>) -> Result<ExperimentReport> {
    if folds.len() < 2 {
        return Err(HarnessError::Inconsistent(format!("need at least 2 folds for a std, got {}", folds.len())));
    }
    folds.sort_by_key(|f| f.fold);
    if folds.windows(2).any(|w| w[0].fold == w[1].fold) {
        return Err(HarnessError::Inconsistent("fold indices repeat".into()));
    }
    let pct = |f: fn(&MetricTriplet) -> Option<f64>| -> Option<(f64, f64)> {
        let v: Vec<f64> = folds.iter().filter_map(|r| f(&r.metrics)).map(|x| 100.0 * x).collect();
        (v.len() >= 2).then(|| mean_and_sample_std(&v))
    };
    let acc = pct(|m| Some(m.accuracy)).expect("two folds");
    let f1 = pct(|m| Some(m.macro_f1)).expect("two folds");
    let walk = pct(|m| m.walking_recall);
    Ok(ExperimentReport {
        fingerprint,
        mean: MetricSummary { accuracy: acc.0, macro_f1: f1.0, walking_recall: walk.map(|w| w.0) },
        std: MetricSummary { accuracy: acc.1, macro_f1: f1.1, walking_recall: walk.map(|w| w.1) },
        per_fold: folds,
    })
}

const METRIC_ROWS: [&str; 3] = ["Accuracy", "Macro F1", "Walking Accuracy"];

fn cells(mean: &MetricSummary, std: &MetricSummary) -> [String; 3] {
    [
        format_cell(mean.accuracy, std.accuracy),
        format_cell(mean.macro_f1, std.macro_f1),
        match (mean.walking_recall, std.walking_recall) {
            (Some(m), Some(s)) => format_cell(m, s),
            _ => "n/a".into(),
        },
    ]
}

fn scheme_row_label(scheme: SchemeName) -> String {
    format!("{} Classes", scheme.num_labels())
}

fn layout(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> =
            row.iter().enumerate().map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count()))).collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-|-"));
            out.push('\n');
        }
    }
    out
}

/// Rows are schemes × metrics, columns architectures × fusions (data and
/// feature fusion first, IMU-only ablations last). Each cell is mean ± std in percent.
pub fn render_report(reports: &[ExperimentReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(HarnessError::Inconsistent("no reports to render".into()));
    }
    let mut keys = BTreeSet::new();
    for r in reports {
        let f = r.fingerprint;
        if !keys.insert((f.scheme, f.architecture, f.fusion)) {
            return Err(HarnessError::Inconsistent(format!(
                "two reports for {} / {}",
                scheme_row_label(f.scheme),
                f.column_label()
            )));
        }
    }
    let archs = [Architecture::DeepConvLSTM, Architecture::McCnn];
    let columns: Vec<(Architecture, Fusion)> = archs
        .iter()
        .flat_map(|&a| [Fusion::EarlyData, Fusion::LateFeature].map(|f| (a, f)))
        .chain(archs.iter().map(|&a| (a, Fusion::ImuOnly)))
        .filter(|&(a, f)| keys.iter().any(|&(_, ka, kf)| (ka, kf) == (a, f)))
        .collect();
    let mut rows = vec![["Scheme".to_string(), "Metric".into()]
        .into_iter()
        .chain(columns.iter().map(|&(a, f)| format!("{} {}", a.display_name(), f.display_name())))
        .collect::<Vec<_>>()];
    for scheme in SchemeName::ALL.into_iter().filter(|s| keys.iter().any(|k| k.0 == *s)) {
        let per_col: Vec<Option<[String; 3]>> = columns
            .iter()
            .map(|&(a, f)| {
                reports
                    .iter()
                    .find(|r| (r.fingerprint.scheme, r.fingerprint.architecture, r.fingerprint.fusion) == (scheme, a, f))
                    .map(|r| cells(&r.mean, &r.std))
            })
            .collect();
        for (m, metric) in METRIC_ROWS.iter().enumerate() {
            let head = if m == 0 { scheme_row_label(scheme) } else { String::new() };
            let mut row = vec![head, metric.to_string()];
            row.extend(per_col.iter().map(|c| c.as_ref().map_or_else(|| "-".to_string(), |c| c[m].clone())));
            rows.push(row);
        }
    }
    Ok(layout(&rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub label: String,
    pub fingerprint: Fingerprint,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scheme: SchemeName,
    pub columns: Vec<ComparisonColumn>,
}

/// Side-by-side view of reports on one scheme, in the order given.
pub fn compare(reports: &[ExperimentReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(HarnessError::Inconsistent(format!("compare needs at least 2 reports, got {}", reports.len())));
    }
    let scheme = reports[0].fingerprint.scheme;
    if let Some(r) = reports.iter().find(|r| r.fingerprint.scheme != scheme) {
        return Err(HarnessError::Inconsistent(format!(
            "scheme mismatch: {} vs {}",
            scheme.as_str(),
            r.fingerprint.scheme.as_str()
        )));
    }
    let distinct: BTreeSet<Fingerprint> = reports.iter().map(|r| r.fingerprint).collect();
    if distinct.len() != reports.len() {
        return Err(HarnessError::Inconsistent("reports share a fingerprint".into()));
    }
    let labels: Vec<String> = reports.iter().map(|r| r.fingerprint.column_label()).collect();
    let columns = reports
        .iter()
        .zip(&labels)
        .map(|(r, label)| {
            let clash = labels.iter().filter(|l| *l == label).count() > 1;
            ComparisonColumn {
                label: if clash { format!("{label} (seed {})", r.fingerprint.seed) } else { label.clone() },
                fingerprint: r.fingerprint,
                mean: r.mean,
                std: r.std,
            }
        })
        .collect();
    Ok(Comparison { scheme, columns })
}

pub fn render_comparison(cmp: &Comparison) -> String {
    let mut rows = vec![["Scheme".to_string(), "Metric".into()]
        .into_iter()
        .chain(cmp.columns.iter().map(|c| c.label.clone()))
        .collect::<Vec<_>>()];
    let per_col: Vec<[String; 3]> = cmp.columns.iter().map(|c| cells(&c.mean, &c.std)).collect();
    for (m, metric) in METRIC_ROWS.iter().enumerate() {
        let head = if m == 0 { scheme_row_label(cmp.scheme) } else { String::new() };
        let mut row = vec![head, metric.to_string()];
        row.extend(per_col.iter().map(|c| c[m].clone()));
        rows.push(row);
    }
    layout(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold(i: usize, acc: f64, walk: Option<f64>) -> FoldResult {
        FoldResult {
            fold: i,
            test_session: format!("S{}", i + 1),
            val_session: String::new(),
            train_sessions: Vec::new(),
            metrics: MetricTriplet { accuracy: acc, macro_f1: acc, walking_recall: walk },
            confusion: ConfusionMatrix::new(2),
            best_epoch: 1,
            epochs_run: 1,
            warnings: Vec::new(),
        }
    }

    fn fp(fusion: Fusion) -> Fingerprint {
        Fingerprint { scheme: SchemeName::Binary2, architecture: Architecture::McCnn, fusion, seed: 1 }
    }

    #[test]
    fn two_point_cell() {
        let r = aggregate(fp(Fusion::LateFeature), vec![fold(0, 0.6, Some(0.6)), fold(1, 0.7, Some(0.7))]).unwrap();
        assert_eq!(format_cell(r.mean.accuracy, r.std.accuracy), "65.00 ± 7.07");
        let same = aggregate(fp(Fusion::LateFeature), vec![fold(0, 0.5, None), fold(1, 0.5, Some(1.0))]).unwrap();
        assert_eq!(same.std.accuracy, 0.0);
        assert_eq!(same.mean.walking_recall, None);
        assert!(aggregate(fp(Fusion::LateFeature), vec![fold(0, 0.5, None)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = aggregate(fp(Fusion::EarlyData), vec![fold(1, 0.9, Some(0.8)), fold(0, 0.7, None)]).unwrap();
        assert_eq!(r.per_fold[0].fold, 0);
        assert_eq!(ExperimentReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn compare_rules() {
        let a = aggregate(fp(Fusion::LateFeature), vec![fold(0, 0.9, None), fold(1, 0.8, None)]).unwrap();
        let b = aggregate(fp(Fusion::ImuOnly), vec![fold(0, 0.5, None), fold(1, 0.4, None)]).unwrap();
        let c = compare(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.columns[0].mean, a.mean);
        assert_eq!(c.columns[1].label, "MC-CNN IMU Only");
        assert!(compare(&[a.clone(), a.clone()]).is_err());
        let mut other = b;
        other.fingerprint.scheme = SchemeName::Full12;
        assert!(compare(&[a, other]).is_err());
    }
}
