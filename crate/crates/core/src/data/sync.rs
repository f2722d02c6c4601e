use serde::{Deserialize, Serialize};

use super::{DataError, Result, SensorRecording};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClapConfig {
    /// Threshold is `mean + threshold_sigma · std` of the acceleration magnitude.
    pub threshold_sigma: f64,
    /// Minimum gap between two accepted peaks, in seconds.
    pub refractory_s: f64,
    /// Claps expected at each end of a session.
    pub min_peaks: usize,
}

impl Default for ClapConfig {
    fn default() -> Self {
        Self { threshold_sigma: 4.0, refractory_s: 0.2, min_peaks: 5 }
    }
}

/// Detected clap instants on the device clock (seconds, including `start_time_s`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClapSync {
    pub start_claps: Vec<f64>,
    pub end_claps: Vec<f64>,
    pub threshold: f64,
}

impl ClapSync {
    pub fn first_clap(&self) -> f64 {
        self.start_claps[0]
    }
}

fn accel_magnitude(rec: &SensorRecording) -> Result<Vec<f64>> {
    let acc: Vec<usize> = rec
        .channels()
        .iter()
        .enumerate()
        .filter(|(_, name)| name.rsplit('/').next().unwrap_or(name).to_ascii_lowercase().starts_with("acc"))
        .map(|(i, _)| i)
        .take(3)
        .collect();
    if acc.len() < 3 {
        return Err(DataError::Invalid(format!(
            "device {} has {} accelerometer channels, clap detection needs 3",
            rec.device_id,
            acc.len()
        )));
    }
    Ok((0..rec.len())
        .map(|t| {
            let row = rec.row(t);
            acc.iter().map(|&c| row[c] * row[c]).sum::<f64>().sqrt()
        })
        .collect())
}

/// Sample indices of thresholded local maxima, thinned by the refractory gap
/// (the larger peak survives a conflict).
pub(crate) fn pick_peaks(signal: &[f64], threshold: f64, min_gap: usize) -> Vec<usize> {
    let mut peaks: Vec<usize> = Vec::new();
    for t in 0..signal.len() {
        let v = signal[t];
        if v <= threshold {
            continue;
        }
        let rising = t == 0 || v >= signal[t - 1];
        let falling = t + 1 == signal.len() || v > signal[t + 1];
        if !(rising && falling) {
            continue;
        }
        match peaks.last() {
            Some(&last) if t - last < min_gap => {
                if v > signal[last] {
                    *peaks.last_mut().expect("non-empty") = t;
                }
            }
            _ => peaks.push(t),
        }
    }
    peaks
}

pub fn detect_clap_sync(rec: &SensorRecording, config: &ClapConfig) -> Result<ClapSync> {
    let mag = accel_magnitude(rec)?;
    let n = mag.len() as f64;
    let mean = mag.iter().sum::<f64>() / n;
    let std = (mag.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + config.threshold_sigma * std;
    let min_gap = (config.refractory_s * rec.rate_hz).ceil().max(1.0) as usize;
    let peaks = if std > 0.0 { pick_peaks(&mag, threshold, min_gap) } else { Vec::new() };
    if peaks.len() < config.min_peaks {
        return Err(DataError::SyncNotFound { found: peaks.len() });
    }
    let to_time = |&i: &usize| rec.start_time_s + i as f64 / rec.rate_hz;
    Ok(ClapSync {
        start_claps: peaks[..config.min_peaks].iter().map(to_time).collect(),
        end_claps: peaks[peaks.len() - config.min_peaks..].iter().map(to_time).collect(),
        threshold,
    })
}

/// Devices of one session merged onto the reference (first by device id) clock.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedStream {
    pub subject_id: String,
    pub session_id: String,
    pub rate_hz: f64,
    /// Reference-clock time of merged row 0.
    pub start_time_s: f64,
    pub channels: Vec<String>,
    /// Row-major `[T' × C_total]`.
    pub samples: Vec<f64>,
}

impl MergedStream {
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.channels.len();
        &self.samples[t * c..(t + 1) * c]
    }
}

/// Shifts each device so its first clap lands on the reference device's first
/// clap, then keeps the span all devices cover. Channels follow device-id order.
///
/// `first_claps[i]` belongs to `recordings[i]`.
pub fn align_devices(recordings: &[SensorRecording], first_claps: &[f64]) -> Result<MergedStream> {
    if recordings.is_empty() {
        return Err(DataError::Invalid("no recordings to align".into()));
    }
    if recordings.len() != first_claps.len() {
        return Err(DataError::Invalid(format!(
            "{} recordings but {} clap times",
            recordings.len(),
            first_claps.len()
        )));
    }
    let rate = recordings[0].rate_hz;
    if recordings.iter().any(|r| r.rate_hz != rate) {
        let rates: Vec<String> = recordings.iter().map(|r| format!("{}={} Hz", r.device_id, r.rate_hz)).collect();
        return Err(DataError::MixedRates(rates.join(", ")));
    }
    let mut order: Vec<usize> = (0..recordings.len()).collect();
    order.sort_by(|&a, &b| recordings[a].device_id.cmp(&recordings[b].device_id));
    for w in order.windows(2) {
        if recordings[w[0]].device_id == recordings[w[1]].device_id {
            return Err(DataError::Invalid(format!("device {} appears twice", recordings[w[0]].device_id)));
        }
    }

    let clap_index: Vec<i64> = order
        .iter()
        .map(|&i| ((first_claps[i] - recordings[i].start_time_s) * rate).round() as i64)
        .collect();
    let shift: Vec<i64> = clap_index.iter().map(|p| p - clap_index[0]).collect();
    let lo = shift.iter().map(|d| -d).max().expect("non-empty").max(0);
    let hi = order
        .iter()
        .zip(&shift)
        .map(|(&i, d)| recordings[i].len() as i64 - d)
        .min()
        .expect("non-empty");
    if hi <= lo {
        return Err(DataError::EmptyOverlap);
    }

    let mut channels = Vec::new();
    for &i in &order {
        let r = &recordings[i];
        channels.extend(r.channels().iter().map(|c| format!("{}/{}", r.device_id, c)));
    }
    let rows = (hi - lo) as usize;
    let mut samples = Vec::with_capacity(rows * channels.len());
    for j in lo..hi {
        for (&i, d) in order.iter().zip(&shift) {
            samples.extend_from_slice(recordings[i].row((j + d) as usize));
        }
    }
    let reference = &recordings[order[0]];
    Ok(MergedStream {
        subject_id: reference.subject_id.clone(),
        session_id: reference.session_id.clone(),
        rate_hz: rate,
        start_time_s: reference.start_time_s + lo as f64 / rate,
        channels,
        samples,
    })
}
