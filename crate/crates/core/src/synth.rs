//! Deterministic synthetic corpora: multi-device recordings with known activity
//! intervals and per-device clock offsets. Clap spikes mark both ends of each session.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    Activity, ActivityScheme, DataError, LabelInterval, LabelTrack, Modality, Result, SensorRecording,
};

/// Which modality carries the class-dependent tones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeparabilityMode {
    ImuDiscriminative,
    BcsDiscriminative,
    Both,
}

/// A sinusoid with additive white noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivitySignature {
    pub activity: Activity,
    pub imu: Tone,
    pub bcs: Tone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub id: String,
    pub channels: Vec<String>,
    #[serde(default)]
    pub clock_offset_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub count: usize,
    pub duration_s: f64,
}

/// One script step; `activity: null` is an unlabeled gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptItem {
    pub activity: Option<Activity>,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClapPlan {
    pub count: usize,
    pub first_s: f64,
    pub spacing_s: f64,
    pub amplitude: f64,
}

impl Default for ClapPlan {
    fn default() -> Self {
        Self { count: 5, first_s: 2.5, spacing_s: 1.0, amplitude: 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub sessions: SessionPlan,
    pub rate_hz: f64,
    pub devices: Vec<DeviceConfig>,
    pub activities: Vec<ActivitySignature>,
    pub separability_mode: SeparabilityMode,
    pub script: Vec<ScriptItem>,
    /// Unlabeled time before the script; holds the opening claps.
    #[serde(default = "default_lead")]
    pub lead_in_s: f64,
    /// Extra per-session offset drawn uniformly from `±offset_jitter_s` and added to each device's offset.
    #[serde(default)]
    pub offset_jitter_s: f64,
    /// Noise of channels that carry no tone (unlabeled time, non-discriminative modality).
    #[serde(default = "default_background")]
    pub background_noise_std: f64,
    #[serde(default)]
    pub clap: ClapPlan,
}

fn default_lead() -> f64 {
    8.0
}

fn default_background() -> f64 {
    0.3
}

fn channel_names(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Ten channels of the proposed wrist sensor.
pub fn proposed_sensor_channels() -> Vec<String> {
    channel_names(&["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "mag_x", "mag_y", "mag_z", "cap"])
}

/// Nine channels of a watch-style IMU.
pub fn watch_channels() -> Vec<String> {
    channel_names(&["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "mag_x", "mag_y", "mag_z"])
}

impl SynthConfig {
    /// Two 25 Hz proposed-sensor devices, five 60 s sessions, four activities
    /// that stay distinct under every built-in scheme except the binary one.
    pub fn four_activity(mode: SeparabilityMode, seed: u64) -> Self {
        let tone = |freq_hz, amplitude| Tone { freq_hz, amplitude, noise_std: 0.3 };
        let activities = vec![
            ActivitySignature { activity: Activity::Null, imu: tone(1.0, 0.5), bcs: tone(0.5, 0.6) },
            ActivitySignature { activity: Activity::Walking, imu: tone(2.0, 1.5), bcs: tone(1.5, 1.2) },
            ActivitySignature { activity: Activity::CheckingMachines, imu: tone(4.0, 1.0), bcs: tone(3.0, 1.8) },
            ActivitySignature { activity: Activity::PressingButton, imu: tone(7.0, 0.8), bcs: tone(5.0, 0.9) },
        ];
        let mut script = Vec::new();
        for _ in 0..2 {
            for a in [Activity::Null, Activity::Walking, Activity::CheckingMachines, Activity::PressingButton] {
                script.push(ScriptItem { activity: Some(a), duration_s: 5.5 });
            }
        }
        Self {
            seed,
            sessions: SessionPlan { count: 5, duration_s: 60.0 },
            rate_hz: 25.0,
            devices: vec![
                DeviceConfig { id: "left".into(), channels: proposed_sensor_channels(), clock_offset_s: 0.0 },
                DeviceConfig { id: "right".into(), channels: proposed_sensor_channels(), clock_offset_s: 0.52 },
            ],
            activities,
            separability_mode: mode,
            script,
            lead_in_s: default_lead(),
            offset_jitter_s: 1.0,
            background_noise_std: default_background(),
            clap: ClapPlan::default(),
        }
    }

    /// Four activities where the IMU tone separates {Null, Walking} from the
    /// rest and the BCS tone separates {Null, CheckingMachines} from the rest:
    /// neither modality alone identifies the class.
    pub fn jointly_discriminative(seed: u64) -> Self {
        let mut cfg = Self::four_activity(SeparabilityMode::Both, seed);
        let imu_a = Tone { freq_hz: 2.0, amplitude: 1.0, noise_std: 0.3 };
        let imu_b = Tone { freq_hz: 5.0, amplitude: 1.0, noise_std: 0.3 };
        let bcs_a = Tone { freq_hz: 1.0, amplitude: 1.0, noise_std: 0.3 };
        let bcs_b = Tone { freq_hz: 4.0, amplitude: 1.0, noise_std: 0.3 };
        for sig in &mut cfg.activities {
            let (imu, bcs) = match sig.activity {
                Activity::Null => (imu_a, bcs_a),
                Activity::Walking => (imu_a, bcs_b),
                Activity::CheckingMachines => (imu_b, bcs_a),
                _ => (imu_b, bcs_b),
            };
            sig.imu = imu;
            sig.bcs = bcs;
        }
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    fn script_len_s(&self) -> f64 {
        self.script.iter().map(|s| s.duration_s).sum()
    }

    fn lead_out_s(&self) -> f64 {
        self.lead_in_s
    }

    fn signature(&self, activity: Activity) -> Option<&ActivitySignature> {
        self.activities.iter().find(|s| s.activity == activity)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.sessions.count == 0 || !(self.sessions.duration_s > 0.0) {
            return bad("need at least one session of positive duration".into());
        }
        if !(self.rate_hz > 0.0) {
            return bad(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        if self.devices.is_empty() {
            return bad("no devices configured".into());
        }
        let mut ids: Vec<&str> = self.devices.iter().map(|d| d.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("device ids must be unique".into());
        }
        for d in &self.devices {
            let probe = SensorRecording::new("", "", d.id.clone(), self.rate_hz, 0.0, d.channels.clone(), vec![0.0; d.channels.len()]);
            probe?;
            let acc = d.channels.iter().filter(|c| c.starts_with("acc")).count();
            if acc < 3 {
                return bad(format!("device {} needs 3 accelerometer channels for clap injection", d.id));
            }
        }
        let nyquist = self.rate_hz / 2.0;
        for sig in &self.activities {
            for (m, t) in [("imu", sig.imu), ("bcs", sig.bcs)] {
                if !(t.freq_hz >= 0.0 && t.freq_hz < nyquist) {
                    return bad(format!("{} {m} frequency {} Hz is not below Nyquist {nyquist} Hz", sig.activity, t.freq_hz));
                }
                if !(t.noise_std >= 0.0) || !t.amplitude.is_finite() {
                    return bad(format!("{} {m} tone has invalid amplitude or noise", sig.activity));
                }
            }
        }
        for item in &self.script {
            if !(item.duration_s > 0.0) {
                return bad(format!("script durations must be positive, got {}", item.duration_s));
            }
            if let Some(a) = item.activity {
                if self.signature(a).is_none() {
                    return bad(format!("script uses {a}, which has no signature"));
                }
            }
        }
        let needed = self.lead_in_s + self.script_len_s() + self.lead_out_s();
        if needed > self.sessions.duration_s + 1e-9 {
            return bad(format!(
                "script needs {needed} s including lead-in and lead-out, session lasts {} s",
                self.sessions.duration_s
            ));
        }
        let clap = &self.clap;
        if clap.count == 0 || clap.first_s + (clap.count - 1) as f64 * clap.spacing_s >= self.lead_in_s {
            return bad("claps must fit inside the lead-in".into());
        }
        let max_offset = self.devices.iter().map(|d| d.clock_offset_s.abs()).fold(0.0, f64::max) + self.offset_jitter_s.abs();
        if max_offset >= clap.first_s - 2.0 / self.rate_hz {
            return bad(format!("clock offsets up to {max_offset} s would push claps off the recording"));
        }
        Ok(())
    }

    /// Clock offset of every device in a session, in device order.
    pub fn session_offsets(&self, session: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * session as u64 + 1);
        self.devices
            .iter()
            .map(|d| {
                let jitter = if self.offset_jitter_s > 0.0 {
                    rng.random_range(-self.offset_jitter_s..=self.offset_jitter_s)
                } else {
                    0.0
                };
                d.clock_offset_s + jitter
            })
            .collect()
    }

    /// Offset of the reference device (smallest id), whose clock the labels use.
    pub fn reference_offset(&self, session: usize) -> f64 {
        let offsets = self.session_offsets(session);
        let (i, _) = self.devices.iter().enumerate().min_by(|a, b| a.1.id.cmp(&b.1.id)).expect("devices");
        offsets[i]
    }

    /// Script steps in world time: `(start, end, activity)`.
    pub fn script_spans(&self) -> Vec<(f64, f64, Option<Activity>)> {
        let mut t = self.lead_in_s;
        self.script
            .iter()
            .map(|item| {
                let span = (t, t + item.duration_s, item.activity);
                t += item.duration_s;
                span
            })
            .collect()
    }

    /// World times of every clap, opening then closing.
    pub fn clap_times(&self) -> Vec<f64> {
        let c = &self.clap;
        let opening: Vec<f64> = (0..c.count).map(|i| c.first_s + i as f64 * c.spacing_s).collect();
        let closing = opening.iter().rev().map(|t| self.sessions.duration_s - t);
        opening.iter().copied().chain(closing).collect()
    }

    pub fn session_id(session: usize) -> String {
        format!("S{}", session + 1)
    }

    /// Label track of a session, in the reference device's clock.
    pub fn session_labels(&self, session: usize) -> LabelTrack {
        let o_ref = self.reference_offset(session);
        let intervals = self
            .script_spans()
            .into_iter()
            .filter_map(|(s, e, a)| a.map(|activity| LabelInterval { start_s: s - o_ref, end_s: e - o_ref, activity }))
            .collect();
        LabelTrack::new(intervals).expect("script spans are ordered")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSession {
    pub session_id: String,
    pub subject_id: String,
    pub recordings: Vec<SensorRecording>,
    pub labels: LabelTrack,
    /// Device id → clock offset in seconds.
    pub offsets: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub sessions: Vec<SynthSession>,
}

fn session_rng(seed: u64, session: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * session as u64 + 2);
    rng
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let spans = config.script_spans();
    let claps = config.clap_times();
    let rate = config.rate_hz;
    let samples_per_device = (config.sessions.duration_s * rate).round() as usize;
    let mut sessions = Vec::with_capacity(config.sessions.count);

    for s in 0..config.sessions.count {
        let mut rng = session_rng(config.seed, s);
        let offsets = config.session_offsets(s);
        // one random phase per script step and modality, shared by all devices
        let phases: Vec<(f64, f64)> =
            spans.iter().map(|_| (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI))).collect();
        let session_id = SynthConfig::session_id(s);
        let subject_id = format!("P{}", s + 1);
        let mut recordings = Vec::with_capacity(config.devices.len());

        for (dev, &offset) in config.devices.iter().zip(&offsets) {
            let c = dev.channels.len();
            let modality: Vec<Modality> = dev.channels.iter().map(|n| Modality::of_channel(n)).collect();
            let slot = |m: Modality, idx: usize| dev.channels[..idx].iter().filter(|n| Modality::of_channel(n) == m).count();
            let count_of = |m: Modality| modality.iter().filter(|&&x| x == m).count().max(1);
            let channel_phase: Vec<f64> =
                (0..c).map(|i| 2.0 * PI * slot(modality[i], i) as f64 / count_of(modality[i]) as f64).collect();
            let is_acc: Vec<bool> = dev.channels.iter().map(|n| n.starts_with("acc")).collect();

            let mut samples = Vec::with_capacity(samples_per_device * c);
            let mut seg = 0usize;
            for k in 0..samples_per_device {
                let world = k as f64 / rate + offset;
                while seg < spans.len() && world >= spans[seg].1 {
                    seg += 1;
                }
                let active = (seg < spans.len() && world >= spans[seg].0)
                    .then(|| spans[seg].2.and_then(|a| config.signature(a)).map(|sig| (sig, phases[seg])))
                    .flatten();
                for ch in 0..c {
                    let tone = active.and_then(|(sig, (p_imu, p_bcs))| {
                        let carries = match (config.separability_mode, modality[ch]) {
                            (SeparabilityMode::Both, _) => true,
                            (SeparabilityMode::ImuDiscriminative, m) => m == Modality::Imu,
                            (SeparabilityMode::BcsDiscriminative, m) => m == Modality::Bcs,
                        };
                        carries.then(|| match modality[ch] {
                            Modality::Imu => (sig.imu, p_imu),
                            Modality::Bcs => (sig.bcs, p_bcs),
                        })
                    });
                    let noise: f64 = rng.sample(StandardNormal);
                    let v = match tone {
                        Some((t, phase)) => {
                            t.amplitude * (2.0 * PI * t.freq_hz * world + phase + channel_phase[ch]).sin() + t.noise_std * noise
                        }
                        None => config.background_noise_std * noise,
                    };
                    samples.push(v);
                }
            }
            // half-cosine clap pulses on the accelerometer axes
            for &clap in &claps {
                let centre = (clap - offset) * rate;
                let lo = (centre - 1.5).ceil().max(0.0) as usize;
                let hi = ((centre + 1.5).floor() as usize).min(samples_per_device - 1);
                for k in lo..=hi {
                    let dt = k as f64 - centre;
                    if dt.abs() < 1.5 {
                        let pulse = config.clap.amplitude * (PI * dt / 3.0).cos();
                        for ch in (0..c).filter(|&ch| is_acc[ch]) {
                            samples[k * c + ch] += pulse;
                        }
                    }
                }
            }
            recordings.push(SensorRecording::new(
                subject_id.clone(),
                session_id.clone(),
                dev.id.clone(),
                rate,
                0.0,
                dev.channels.clone(),
                samples,
            )?);
        }
        sessions.push(SynthSession {
            labels: config.session_labels(s),
            offsets: config.devices.iter().map(|d| d.id.clone()).zip(offsets).collect(),
            session_id,
            subject_id,
            recordings,
        });
    }
    Ok(SynthCorpus { sessions })
}

#[derive(Serialize)]
struct SyncTruth<'a> {
    reference_device: &'a str,
    offsets_s: &'a BTreeMap<String, f64>,
    clap_times_s: Vec<f64>,
}

/// Writes `sessions/<id>/<device>.csv`, `labels.json` and `sync_truth.json`,
/// plus the generating config as `synth_config.json` at the top.
pub fn write_corpus(corpus: &SynthCorpus, config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<()> {
    let top = out_dir.as_ref();
    std::fs::create_dir_all(top).map_err(|e| DataError::io(top, e))?;
    let path = top.join("synth_config.json");
    std::fs::write(&path, config.to_json()).map_err(|e| DataError::io(&path, e))?;
    let root = top.join("sessions");
    for session in &corpus.sessions {
        let dir = root.join(&session.session_id);
        std::fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        for rec in &session.recordings {
            rec.write_csv(dir.join(format!("{}.csv", rec.device_id)))?;
        }
        session.labels.write(dir.join("labels.json"))?;
        let reference = session.offsets.keys().next().expect("devices").as_str();
        let truth = SyncTruth { reference_device: reference, offsets_s: &session.offsets, clap_times_s: config.clap_times() };
        let path = dir.join("sync_truth.json");
        let text = serde_json::to_string_pretty(&truth)? + "\n";
        std::fs::write(&path, text).map_err(|e| DataError::io(&path, e))?;
    }
    Ok(())
}

/// Window labels computed straight from the script by interval arithmetic,
/// for a stream of `len` samples whose first sample sits at reference time `start_time_s`.
/// Returns `(start_index, label)` for every kept window.
pub fn expected_window_labels(
    config: &SynthConfig,
    session: usize,
    scheme: &ActivityScheme,
    window_len: usize,
    step: usize,
    start_time_s: f64,
    len: usize,
) -> Vec<(usize, usize)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Kind {
        Gap,
        Drop,
        Label(usize),
    }
    let o_ref = config.reference_offset(session);
    let rate = config.rate_hz;
    let index = |t: f64| (((t - o_ref - start_time_s) * rate).round().max(0.0) as usize).min(len);
    let segments: Vec<(usize, usize, Kind)> = config
        .script_spans()
        .into_iter()
        .filter_map(|(s, e, a)| {
            let kind = match scheme.map(a?) {
                Some(l) => Kind::Label(l),
                None => Kind::Drop,
            };
            Some((index(s), index(e), kind))
        })
        .collect();

    let mut out = Vec::new();
    if window_len > len {
        return out;
    }
    let mut start = 0;
    while start + window_len <= len {
        let end = start + window_len;
        // (kind, samples, first sample index)
        let mut tally: Vec<(Kind, usize, usize)> = Vec::new();
        let mut covered = 0;
        let mut first_gap = None;
        let mut cursor = start;
        for &(a, b, kind) in &segments {
            let lo = a.max(start);
            let hi = b.min(end);
            if hi <= lo {
                continue;
            }
            if lo > cursor && first_gap.is_none() {
                first_gap = Some(cursor);
            }
            cursor = cursor.max(hi);
            covered += hi - lo;
            match tally.iter_mut().find(|t| t.0 == kind) {
                Some(t) => t.1 += hi - lo,
                None => tally.push((kind, hi - lo, lo)),
            }
        }
        if covered < window_len {
            tally.push((Kind::Gap, window_len - covered, first_gap.unwrap_or(cursor)));
        }
        let best = tally
            .iter()
            .max_by(|x, y| x.1.cmp(&y.1).then(y.2.cmp(&x.2)))
            .expect("window is non-empty");
        if let Kind::Label(l) = best.0 {
            out.push((start, l));
        }
        start += step;
    }
    out
}

/// [`expected_window_labels`] over the reference device's full recording.
pub fn expected_majority_labels(
    config: &SynthConfig,
    session: usize,
    scheme: &ActivityScheme,
    window_len: usize,
    step: usize,
) -> Vec<(usize, usize)> {
    let len = (config.sessions.duration_s * config.rate_hz).round() as usize;
    expected_window_labels(config, session, scheme, window_len, step, 0.0, len)
}
