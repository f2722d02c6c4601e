use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Activity, DataError, LabelTrack, Result};

const POSTURE4_MAPPING: &str = include_str!("../../schemes/posture4.json");
const DROP: &str = "DROP";

/// The five built-in annotation schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Full12,
    NoNull11,
    Posture4,
    Posture3,
    Binary2,
}

impl SchemeName {
    pub const ALL: [SchemeName; 5] =
        [SchemeName::Full12, SchemeName::NoNull11, SchemeName::Posture4, SchemeName::Posture3, SchemeName::Binary2];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Full12 => "full12",
            SchemeName::NoNull11 => "nonull11",
            SchemeName::Posture4 => "posture4",
            SchemeName::Posture3 => "posture3",
            SchemeName::Binary2 => "binary2",
        }
    }

    pub fn num_labels(self) -> usize {
        match self {
            SchemeName::Full12 => 12,
            SchemeName::NoNull11 => 11,
            SchemeName::Posture4 => 4,
            SchemeName::Posture3 => 3,
            SchemeName::Binary2 => 2,
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        SchemeName::ALL
            .into_iter()
            .find(|n| n.as_str() == lower)
            .ok_or_else(|| DataError::InvalidScheme(format!("unknown scheme {s:?}; expected one of full12, nonull11, posture4, posture3, binary2")))
    }
}

/// Total mapping from the twelve base activities to scheme labels or DROP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivityScheme {
    name: String,
    labels: Vec<String>,
    mapping: [Option<usize>; 12],
}

impl ActivityScheme {
    pub fn builtin(name: SchemeName) -> Self {
        Self::builtin_with_posture(name, &Self::default_posture4())
    }

    /// Built-in scheme, with Posture4/Posture3 derived from the given posture mapping.
    pub fn builtin_with_posture(name: SchemeName, posture4: &ActivityScheme) -> Self {
        match name {
            SchemeName::Full12 => Self {
                name: name.to_string(),
                labels: Activity::ALL.iter().map(|a| a.name().to_string()).collect(),
                mapping: std::array::from_fn(Some),
            },
            SchemeName::NoNull11 => Self::builtin(SchemeName::Full12).without_label("Null", name.as_str()),
            SchemeName::Posture4 => Self { name: name.to_string(), ..posture4.clone() },
            SchemeName::Posture3 => posture4.without_label("Null", name.as_str()),
            SchemeName::Binary2 => Self {
                name: name.to_string(),
                labels: vec!["Walking".into(), "NonWalking".into()],
                mapping: std::array::from_fn(|i| Some(usize::from(Activity::ALL[i] != Activity::Walking))),
            },
        }
    }

    /// The shipped 12→4 posture mapping (an assumption, editable via a mapping file).
    pub fn default_posture4() -> Self {
        Self::from_mapping_json(SchemeName::Posture4.as_str(), POSTURE4_MAPPING).expect("bundled posture mapping is valid")
    }

    /// Parses a JSON object `activity → label | "DROP"`. Label ids follow the
    /// order in which labels first appear in the object.
    pub fn from_mapping_json(name: &str, text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let obj = value.as_object().ok_or_else(|| DataError::InvalidScheme("mapping must be a JSON object".into()))?;
        let mut labels: Vec<String> = Vec::new();
        let mut mapping: [Option<Option<usize>>; 12] = [None; 12];
        for (key, target) in obj {
            let activity: Activity = key.parse()?;
            let target = target
                .as_str()
                .ok_or_else(|| DataError::InvalidScheme(format!("target for {key} must be a string")))?;
            let slot = if target == DROP {
                None
            } else {
                let idx = labels.iter().position(|l| l == target).unwrap_or_else(|| {
                    labels.push(target.to_string());
                    labels.len() - 1
                });
                Some(idx)
            };
            if mapping[activity.index()].replace(slot).is_some() {
                return Err(DataError::InvalidScheme(format!("{key} mapped twice")));
            }
        }
        let missing: Vec<&str> = Activity::ALL.iter().filter(|a| mapping[a.index()].is_none()).map(|a| a.name()).collect();
        if !missing.is_empty() {
            return Err(DataError::InvalidScheme(format!("mapping is not total; missing {}", missing.join(", "))));
        }
        if labels.len() < 2 {
            return Err(DataError::InvalidScheme("a scheme needs at least two labels".into()));
        }
        Ok(Self { name: name.to_string(), labels, mapping: mapping.map(|m| m.expect("checked total")) })
    }

    pub fn to_mapping_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        for a in Activity::ALL {
            let target = self.map(a).map_or(DROP, |l| self.labels[l].as_str());
            obj.insert(a.name().to_string(), Value::String(target.to_string()));
        }
        serde_json::to_string_pretty(&Value::Object(obj)).expect("mapping serializes")
    }

    fn without_label(&self, label: &str, new_name: &str) -> Self {
        let removed = self.labels.iter().position(|l| l == label);
        let labels = self.labels.iter().filter(|l| *l != label).cloned().collect();
        let mapping = self.mapping.map(|m| match (m, removed) {
            (Some(l), Some(r)) if l == r => None,
            (Some(l), Some(r)) if l > r => Some(l - 1),
            (m, _) => m,
        });
        Self { name: new_name.to_string(), labels, mapping }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Scheme label of a base activity, `None` for DROP.
    pub fn map(&self, activity: Activity) -> Option<usize> {
        self.mapping[activity.index()]
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn walking_label(&self) -> Option<usize> {
        self.label_index("Walking")
    }
}

/// A label track after remapping: surviving intervals carry scheme label ids;
/// DROP-mapped spans are kept apart so segmentation can tell them from unlabeled time.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeTrack {
    pub labels: Vec<String>,
    pub intervals: Vec<(f64, f64, usize)>,
    pub dropped: Vec<(f64, f64)>,
}

pub fn apply_scheme(track: &LabelTrack, scheme: &ActivityScheme) -> SchemeTrack {
    let mut intervals = Vec::new();
    let mut dropped = Vec::new();
    for iv in track.intervals() {
        match scheme.map(iv.activity) {
            Some(label) => intervals.push((iv.start_s, iv.end_s, label)),
            None => dropped.push((iv.start_s, iv.end_s)),
        }
    }
    SchemeTrack { labels: scheme.labels().to_vec(), intervals, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelInterval;

    #[test]
    fn builtin_label_counts() {
        for name in SchemeName::ALL {
            let s = ActivityScheme::builtin(name);
            assert_eq!(s.num_labels(), name.num_labels(), "{name}");
            assert_eq!(name.as_str().parse::<SchemeName>().unwrap(), name);
        }
        assert!("posture5".parse::<SchemeName>().is_err());
    }

    #[test]
    fn scheme_algebra() {
        let full = ActivityScheme::builtin(SchemeName::Full12);
        let nonull = ActivityScheme::builtin(SchemeName::NoNull11);
        let p4 = ActivityScheme::builtin(SchemeName::Posture4);
        let p3 = ActivityScheme::builtin(SchemeName::Posture3);
        let bin = ActivityScheme::builtin(SchemeName::Binary2);
        for a in Activity::ALL {
            assert_eq!(full.labels()[full.map(a).unwrap()], a.name());
            if a == Activity::Null {
                assert_eq!(nonull.map(a), None);
                assert_eq!(p3.map(a), None);
            } else {
                assert_eq!(nonull.labels()[nonull.map(a).unwrap()], a.name());
                assert_eq!(p3.labels()[p3.map(a).unwrap()], p4.labels()[p4.map(a).unwrap()]);
            }
            let expected = if a == Activity::Walking { "Walking" } else { "NonWalking" };
            assert_eq!(bin.labels()[bin.map(a).unwrap()], expected);
        }
        assert_eq!(bin.walking_label(), Some(0));
        assert_eq!(p4.labels(), &["Null", "Walking", "UpperParts", "LowerParts"]);
        assert_eq!(p4.labels()[p4.map(Activity::CheckingMachines).unwrap()], "LowerParts");
    }

    #[test]
    fn mapping_file_round_trip_and_validation() {
        let p4 = ActivityScheme::default_posture4();
        let again = ActivityScheme::from_mapping_json("posture4", &p4.to_mapping_json()).unwrap();
        for a in Activity::ALL {
            assert_eq!(p4.labels()[p4.map(a).unwrap()], again.labels()[again.map(a).unwrap()]);
        }
        let partial = r#"{"Null": "A", "Walking": "B"}"#;
        assert!(ActivityScheme::from_mapping_json("x", partial).unwrap_err().to_string().contains("not total"));
    }

    #[test]
    fn apply_scheme_examples() {
        let track = LabelTrack::new(vec![
            LabelInterval { start_s: 0.0, end_s: 1.0, activity: Activity::Walking },
            LabelInterval { start_s: 1.0, end_s: 2.0, activity: Activity::Null },
            LabelInterval { start_s: 2.0, end_s: 3.0, activity: Activity::PressingButton },
        ])
        .unwrap();
        let bin = apply_scheme(&track, &ActivityScheme::builtin(SchemeName::Binary2));
        assert_eq!(bin.intervals, vec![(0.0, 1.0, 0), (1.0, 2.0, 1), (2.0, 3.0, 1)]);
        let nonull = apply_scheme(&track, &ActivityScheme::builtin(SchemeName::NoNull11));
        assert_eq!(nonull.intervals.len(), 2);
        assert_eq!(nonull.dropped, vec![(1.0, 2.0)]);
        assert!(nonull.intervals.iter().all(|&(_, _, l)| nonull.labels[l] != "Null"));
    }
}
