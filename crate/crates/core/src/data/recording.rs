use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, Result};

/// One device's multichannel stream for one session.
///
/// Sample `t` is taken at `start_time_s + t / rate_hz` on the device clock.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorRecording {
    pub subject_id: String,
    pub session_id: String,
    pub device_id: String,
    pub rate_hz: f64,
    pub start_time_s: f64,
    channels: Vec<String>,
    /// Row-major `[T × C]`.
    samples: Vec<f64>,
}

impl SensorRecording {
    pub fn new(
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
        device_id: impl Into<String>,
        rate_hz: f64,
        start_time_s: f64,
        channels: Vec<String>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(DataError::Invalid(format!("sampling rate must be positive, got {rate_hz}")));
        }
        if channels.is_empty() {
            return Err(DataError::Invalid("recording has no channels".into()));
        }
        let mut seen = HashSet::new();
        for c in &channels {
            if !seen.insert(c.as_str()) {
                return Err(DataError::DuplicateChannel(c.clone()));
            }
        }
        if samples.is_empty() || !samples.len().is_multiple_of(channels.len()) {
            return Err(DataError::Invalid(format!(
                "{} values do not form whole rows of {} channels",
                samples.len(),
                channels.len()
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            session_id: session_id.into(),
            device_id: device_id.into(),
            rate_hz,
            start_time_s,
            channels,
            samples,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.channels.len();
        &self.samples[t * c..(t + 1) * c]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 12);
        let _ = writeln!(out, "#subject={}", self.subject_id);
        let _ = writeln!(out, "#session={}", self.session_id);
        let _ = writeln!(out, "#device={}", self.device_id);
        let _ = writeln!(out, "#rate_hz={}", self.rate_hz);
        let _ = writeln!(out, "#start_time_s={}", self.start_time_s);
        out.push_str(&self.channels.join(","));
        out.push('\n');
        for row in self.samples.chunks_exact(self.channels.len()) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                // Display for f64 is the shortest exact round-trip form.
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| DataError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// Parses the recording CSV format; `origin` names the source in errors.
    pub fn parse_csv(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, column: Option<usize>, detail: String| DataError::Parse {
            origin: origin.to_string(),
            line,
            column,
            detail,
        };
        let mut subject = None;
        let mut session = None;
        let mut device = None;
        let mut rate = None;
        let mut start = None;
        let mut channels: Option<Vec<String>> = None;
        let mut samples = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if channels.is_some() {
                    return Err(err(line_no, None, "header line after the channel row".into()));
                }
                let (key, value) = meta
                    .split_once('=')
                    .ok_or_else(|| err(line_no, None, format!("malformed header {line:?}")))?;
                let value = value.trim().to_string();
                let parse_f = |v: &str| v.parse::<f64>().map_err(|_| err(line_no, None, format!("{key} is not a number: {v:?}")));
                match key.trim() {
                    "subject" => subject = Some(value),
                    "session" => session = Some(value),
                    "device" => device = Some(value),
                    "rate_hz" => rate = Some(parse_f(&value)?),
                    "start_time_s" => start = Some(parse_f(&value)?),
                    other => return Err(err(line_no, None, format!("unknown header key {other:?}"))),
                }
                continue;
            }
            match &channels {
                None => {
                    let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                    let mut seen = HashSet::new();
                    for (col, n) in names.iter().enumerate() {
                        if n.is_empty() {
                            return Err(err(line_no, Some(col + 1), "empty channel name".into()));
                        }
                        if !seen.insert(n.as_str()) {
                            return Err(DataError::Parse {
                                origin: origin.to_string(),
                                line: line_no,
                                column: Some(col + 1),
                                detail: format!("duplicate channel name {n:?}"),
                            });
                        }
                    }
                    channels = Some(names);
                }
                Some(names) => {
                    let mut count = 0;
                    for (col, cell) in line.split(',').enumerate() {
                        let v: f64 = cell
                            .trim()
                            .parse()
                            .map_err(|_| err(line_no, Some(col + 1), format!("non-numeric value {cell:?}")))?;
                        samples.push(v);
                        count += 1;
                    }
                    if count != names.len() {
                        return Err(err(
                            line_no,
                            None,
                            format!("row has {count} values, header declares {} channels", names.len()),
                        ));
                    }
                }
            }
        }

        let missing = |what: &str| err(0, None, format!("missing #{what}= header"));
        let channels = channels.ok_or_else(|| err(0, None, "missing channel header row".into()))?;
        if samples.is_empty() {
            return Err(err(0, None, "no sample rows".into()));
        }
        Self::new(
            subject.ok_or_else(|| missing("subject"))?,
            session.ok_or_else(|| missing("session"))?,
            device.ok_or_else(|| missing("device"))?,
            rate.ok_or_else(|| missing("rate_hz"))?,
            start.ok_or_else(|| missing("start_time_s"))?,
            channels,
            samples,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_channels() -> Vec<String> {
        ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "mag_x", "mag_y", "mag_z", "cap"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn parses_well_formed_file() {
        let samples: Vec<f64> = (0..2500).map(|v| (v as f64 * 0.37).sin()).collect();
        let rec = SensorRecording::new("P1", "s1", "left", 25.0, 0.0, ten_channels(), samples).unwrap();
        let parsed = SensorRecording::parse_csv(&rec.to_csv(), "mem").unwrap();
        assert_eq!(parsed.len(), 250);
        assert_eq!(parsed.num_channels(), 10);
        assert_eq!(parsed, rec);
    }

    #[test]
    fn short_row_names_first_bad_line() {
        let mut text = String::from("#subject=a\n#session=b\n#device=c\n#rate_hz=25\n#start_time_s=0\n");
        text.push_str(&ten_channels().join(","));
        text.push('\n');
        text.push_str(&["1"; 10].join(","));
        text.push('\n');
        text.push_str(&["1"; 9].join(","));
        text.push('\n');
        text.push_str(&["1"; 9].join(","));
        text.push('\n');
        let err = SensorRecording::parse_csv(&text, "f.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 8"), "{msg}");
        assert!(msg.contains("9 values"), "{msg}");
    }

    #[test]
    fn non_numeric_cell_has_column() {
        let text = "#subject=a\n#session=b\n#device=c\n#rate_hz=25\n#start_time_s=0\nx,y\n1,2\n3,abc\n";
        let err = SensorRecording::parse_csv(text, "f.csv").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 8, column: Some(2), .. }), "{err}");
    }

    #[test]
    fn duplicate_channel_rejected() {
        let text = "#subject=a\n#session=b\n#device=c\n#rate_hz=25\n#start_time_s=0\nx,y,x\n1,2,3\n";
        let err = SensorRecording::parse_csv(text, "f.csv").unwrap_err();
        assert!(err.to_string().contains("duplicate channel"), "{err}");
        assert!(SensorRecording::new("a", "b", "c", 25.0, 0.0, vec!["x".into(), "x".into()], vec![0.0; 2]).is_err());
    }

    #[test]
    fn missing_header_rejected() {
        let text = "#subject=a\n#session=b\n#rate_hz=25\n#start_time_s=0\nx\n1\n";
        assert!(SensorRecording::parse_csv(text, "f.csv").unwrap_err().to_string().contains("device"));
    }
}
