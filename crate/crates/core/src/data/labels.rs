use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activity, DataError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub activity: Activity,
}

/// Ground-truth activity intervals for one session: sorted, non-overlapping, half-open.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelTrack {
    intervals: Vec<LabelInterval>,
}

impl LabelTrack {
    pub fn new(intervals: Vec<LabelInterval>) -> Result<Self> {
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.start_s < iv.end_s) || !iv.start_s.is_finite() || !iv.end_s.is_finite() {
                return Err(DataError::InvalidLabels(format!(
                    "interval {i} has start {} not before end {}",
                    iv.start_s, iv.end_s
                )));
            }
            if i > 0 && intervals[i - 1].end_s > iv.start_s {
                return Err(DataError::InvalidLabels(format!(
                    "interval {i} starting at {} overlaps or precedes interval {} ending at {}",
                    iv.start_s,
                    i - 1,
                    intervals[i - 1].end_s
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[LabelInterval] {
        &self.intervals
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.intervals).expect("label intervals serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            start_s: f64,
            end_s: f64,
            activity: String,
        }
        let raw: Vec<Raw> = serde_json::from_str(text)?;
        let intervals = raw
            .into_iter()
            .map(|r| Ok(LabelInterval { start_s: r.start_s, end_s: r.end_s, activity: r.activity.parse()? }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(intervals)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| DataError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: f64, e: f64, a: Activity) -> LabelInterval {
        LabelInterval { start_s: s, end_s: e, activity: a }
    }

    #[test]
    fn validates_ordering() {
        assert!(LabelTrack::new(vec![iv(0.0, 1.0, Activity::Null), iv(1.0, 2.0, Activity::Walking)]).is_ok());
        assert!(LabelTrack::new(vec![iv(0.0, 1.5, Activity::Null), iv(1.0, 2.0, Activity::Walking)]).is_err());
        assert!(LabelTrack::new(vec![iv(1.0, 1.0, Activity::Null)]).is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_activity() {
        let track = LabelTrack::new(vec![iv(0.0, 2.5, Activity::OpeningDoor), iv(3.0, 4.0, Activity::Walking)]).unwrap();
        assert_eq!(LabelTrack::from_json(&track.to_json()).unwrap(), track);
        let err = LabelTrack::from_json(r#"[{"start_s":0,"end_s":1,"activity":"Dancing"}]"#).unwrap_err();
        assert!(matches!(err, DataError::UnknownActivity(_)));
    }
}
