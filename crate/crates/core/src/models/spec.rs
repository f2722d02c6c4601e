use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::data::Modality;
use crate::nn::conv_output_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "MCCNN")]
    McCnn,
    DeepConvLSTM,
}

impl Architecture {
    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::McCnn => "MC-CNN",
            Architecture::DeepConvLSTM => "DeepConvLSTM",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mccnn" => Ok(Architecture::McCnn),
            "deepconvlstm" | "convlstm" => Ok(Architecture::DeepConvLSTM),
            _ => Err(ModelError::InvalidSpec(format!("unknown architecture {s:?}; expected mccnn or deepconvlstm"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fusion {
    EarlyData,
    LateFeature,
    ImuOnly,
}

impl Fusion {
    pub fn display_name(self) -> &'static str {
        match self {
            Fusion::EarlyData => "Data Fusion",
            Fusion::LateFeature => "Feature Fusion",
            Fusion::ImuOnly => "IMU Only",
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Fusion::EarlyData => "early",
            Fusion::LateFeature => "late",
            Fusion::ImuOnly => "imu-only",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Fusion {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "early" | "earlydata" => Ok(Fusion::EarlyData),
            "late" | "latefeature" => Ok(Fusion::LateFeature),
            "imuonly" | "imu" => Ok(Fusion::ImuOnly),
            _ => Err(ModelError::InvalidSpec(format!("unknown fusion {s:?}; expected early, late or imu-only"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub modality: Modality,
}

/// Layer sizes. `None` fields take architecture-dependent defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    /// Filters per conv block of the main extractor (64×3 for MC-CNN, 64×2 for DeepConvLSTM).
    pub filters: Option<Vec<usize>>,
    /// Filters per block of the BCS extractor under late fusion.
    pub bcs_filters: usize,
    pub kernel_len: usize,
    pub stride: usize,
    /// Whether each block ends in max pooling (MC-CNN: after the first block only; DeepConvLSTM: never).
    pub pool_after: Option<Vec<bool>>,
    pub pool_len: usize,
    pub dropout: f64,
    pub dense_hidden: usize,
    pub lstm_hidden: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            filters: None,
            bcs_filters: 16,
            kernel_len: 5,
            stride: 1,
            pool_after: None,
            pool_len: 2,
            dropout: 0.5,
            dense_hidden: 128,
            lstm_hidden: 128,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelHyper {
    pub fn filters_for(&self, arch: Architecture) -> Vec<usize> {
        self.filters.clone().unwrap_or_else(|| match arch {
            Architecture::McCnn => vec![64; 3],
            Architecture::DeepConvLSTM => vec![64; 2],
        })
    }

    pub fn pool_schedule(&self, arch: Architecture) -> Vec<bool> {
        let blocks = self.filters_for(arch).len();
        self.pool_after.clone().unwrap_or_else(|| match arch {
            Architecture::McCnn => (0..blocks).map(|i| i == 0).collect(),
            Architecture::DeepConvLSTM => vec![false; blocks],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub fusion: Fusion,
    pub num_labels: usize,
    pub window_len: usize,
    pub input_layout: Vec<ChannelSpec>,
    #[serde(default)]
    pub hyper: ModelHyper,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    /// Tags each channel by name (`cap…` is BCS, everything else IMU).
    pub fn new(architecture: Architecture, fusion: Fusion, num_labels: usize, window_len: usize, channels: &[String]) -> Self {
        Self {
            architecture,
            fusion,
            num_labels,
            window_len,
            input_layout: channels
                .iter()
                .map(|n| ChannelSpec { name: n.clone(), modality: Modality::of_channel(n) })
                .collect(),
            hyper: ModelHyper::default(),
            seed: 0,
        }
    }

    pub fn channels_of(&self, modality: Modality) -> Vec<usize> {
        self.input_layout.iter().enumerate().filter(|(_, c)| c.modality == modality).map(|(i, _)| i).collect()
    }

    /// Time length after every conv and pool step, starting with the window length.
    pub fn length_trace(&self) -> std::result::Result<Vec<usize>, Vec<usize>> {
        let h = &self.hyper;
        let mut trace = vec![self.window_len];
        let mut len = self.window_len;
        for pool in self.hyper.pool_schedule(self.architecture) {
            len = match conv_output_len(len, h.kernel_len, h.stride) {
                Some(l) => l,
                None => return Err(trace),
            };
            trace.push(len);
            if pool {
                len /= h.pool_len;
                trace.push(len);
                if len == 0 {
                    return Err(trace);
                }
            }
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        let h = &self.hyper;
        if self.num_labels < 2 {
            return bad(format!("need at least 2 labels, got {}", self.num_labels));
        }
        if self.input_layout.is_empty() {
            return bad("input layout has no channels".into());
        }
        let imu = self.channels_of(Modality::Imu).len();
        let bcs = self.channels_of(Modality::Bcs).len();
        match self.fusion {
            Fusion::LateFeature if imu == 0 || bcs == 0 => {
                return bad(format!("late feature fusion needs IMU and BCS channels; layout has {imu} IMU and {bcs} BCS"))
            }
            Fusion::ImuOnly if imu == 0 => return bad("IMU-only fusion needs at least one IMU channel".into()),
            _ => {}
        }
        let filters = h.filters_for(self.architecture);
        if filters.is_empty() || filters.contains(&0) || h.bcs_filters == 0 {
            return bad(format!("filter counts must be positive, got {filters:?} / {}", h.bcs_filters));
        }
        if h.pool_schedule(self.architecture).len() != filters.len() {
            return bad("pool_after must have one entry per conv block".into());
        }
        if h.kernel_len == 0 || h.stride == 0 || h.pool_len == 0 {
            return bad("kernel length, stride and pool length must be positive".into());
        }
        if !(0.0..1.0).contains(&h.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", h.dropout));
        }
        if h.dense_hidden == 0 || h.lstm_hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if let Err(trace) = self.length_trace() {
            return Err(ModelError::WindowTooShort { window_len: self.window_len, trace });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ModelError::InvalidSpec(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(n_imu: usize, n_bcs: usize) -> Vec<String> {
        (0..n_imu).map(|i| format!("d/acc{i}")).chain((0..n_bcs).map(|i| format!("d{i}/cap"))).collect()
    }

    #[test]
    fn default_trace() {
        let spec = ModelSpec::new(Architecture::McCnn, Fusion::EarlyData, 12, 25, &layout(18, 2));
        assert_eq!(spec.length_trace().unwrap(), vec![25, 21, 10, 6, 2]);
        let spec = ModelSpec::new(Architecture::DeepConvLSTM, Fusion::EarlyData, 12, 25, &layout(18, 2));
        assert_eq!(spec.length_trace().unwrap(), vec![25, 21, 17]);
    }

    #[test]
    fn short_window_reports_trace() {
        let mut spec = ModelSpec::new(Architecture::McCnn, Fusion::EarlyData, 4, 25, &layout(3, 1));
        spec.hyper.pool_after = Some(vec![true, true, false]);
        match spec.validate() {
            Err(ModelError::WindowTooShort { trace, .. }) => assert_eq!(trace, vec![25, 21, 10, 6, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn late_fusion_needs_bcs() {
        let spec = ModelSpec::new(Architecture::DeepConvLSTM, Fusion::LateFeature, 4, 100, &layout(27, 0));
        assert!(spec.validate().unwrap_err().to_string().contains("BCS"));
        let spec = ModelSpec::new(Architecture::DeepConvLSTM, Fusion::ImuOnly, 4, 100, &layout(27, 0));
        spec.validate().unwrap();
    }

    #[test]
    fn parse_names_and_json() {
        assert_eq!("mc-cnn".parse::<Architecture>().unwrap(), Architecture::McCnn);
        assert_eq!("DeepConvLSTM".parse::<Architecture>().unwrap(), Architecture::DeepConvLSTM);
        assert_eq!("imu-only".parse::<Fusion>().unwrap(), Fusion::ImuOnly);
        assert!("middle".parse::<Fusion>().is_err());
        let spec = ModelSpec::new(Architecture::McCnn, Fusion::LateFeature, 4, 25, &layout(18, 2));
        assert_eq!(ModelSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!(spec.to_json().contains("\"MCCNN\""));
    }
}
