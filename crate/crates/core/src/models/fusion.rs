use std::io::{Read, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{Architecture, Fusion, ModelError, ModelSpec, Result};
use crate::data::Modality;
use crate::nn::gradcheck::{layer_pattern, Differentiable};
use crate::nn::{
    io, softmax_cross_entropy, BatchNorm1d, Conv1d, Dense, Dropout, Layer, Lstm, MaxPool1d, Mode, NnError, Relu,
};
use crate::tensor::Tensor;

/// One convolutional feature extractor and the input channels it reads.
#[derive(Clone, Debug)]
struct Branch {
    channels: Vec<usize>,
    layers: Vec<Layer>,
    out_channels: usize,
    out_len: usize,
}

impl Branch {
    /// `[B×W×C]` → `[B×C_b×W]` over this branch's channels.
    fn gather(&self, x: &Tensor) -> Tensor {
        let (b, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cb = self.channels.len();
        let src = x.data();
        let mut out = vec![0.0; b * cb * w];
        for bi in 0..b {
            for (ci, &ch) in self.channels.iter().enumerate() {
                let dst = &mut out[(bi * cb + ci) * w..(bi * cb + ci + 1) * w];
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = src[(bi * w + t) * c + ch];
                }
            }
        }
        Tensor::new(vec![b, cb, w], out).expect("gather shape")
    }

    fn scatter_add(&self, grad: &Tensor, into: &mut [f64], c: usize) {
        let (b, cb, w) = (grad.shape()[0], grad.shape()[1], grad.shape()[2]);
        let g = grad.data();
        for bi in 0..b {
            for (ci, &ch) in self.channels.iter().enumerate() {
                for t in 0..w {
                    into[(bi * w + t) * c + ch] += g[(bi * cb + ci) * w + t];
                }
            }
        }
    }
}

/// A built MC-CNN or DeepConvLSTM with one extractor (early fusion, IMU only)
/// or two (late fusion: IMU-CNN and BCS-CNN).
#[derive(Clone, Debug)]
pub struct FusionModel {
    spec: ModelSpec,
    branches: Vec<Branch>,
    /// MC-CNN: Dense, ReLU, Dense. DeepConvLSTM: LSTM, Dense.
    head: Vec<Layer>,
    cached_batch: Option<usize>,
}

fn extractor(spec: &ModelSpec, in_channels: usize, filters: &[usize], rng: &mut dyn RngCore) -> Result<Vec<Layer>> {
    let h = &spec.hyper;
    let mut layers = Vec::new();
    let mut c_in = in_channels;
    for (&f, pool) in filters.iter().zip(h.pool_schedule(spec.architecture)) {
        let mut conv = Conv1d::new(c_in, f, h.kernel_len, h.stride)?;
        conv.init(rng);
        layers.push(Layer::Conv1d(conv));
        layers.push(Layer::BatchNorm1d(BatchNorm1d::new(f, h.bn_eps, h.bn_momentum)?));
        layers.push(Layer::Relu(Relu::new()));
        if pool {
            layers.push(Layer::MaxPool1d(MaxPool1d::new(h.pool_len)?));
        }
        layers.push(Layer::Dropout(Dropout::new(h.dropout)?));
        c_in = f;
    }
    Ok(layers)
}

pub fn build_model(spec: &ModelSpec) -> Result<FusionModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = &spec.hyper;
    let filters = h.filters_for(spec.architecture);
    let out_len = *spec.length_trace().expect("validated").last().expect("non-empty trace");
    let all: Vec<usize> = (0..spec.input_layout.len()).collect();
    let imu = spec.channels_of(Modality::Imu);
    let groups: Vec<(Vec<usize>, Vec<usize>)> = match spec.fusion {
        Fusion::EarlyData => vec![(all, filters.clone())],
        Fusion::ImuOnly => vec![(imu, filters.clone())],
        Fusion::LateFeature => {
            vec![(imu, filters.clone()), (spec.channels_of(Modality::Bcs), vec![h.bcs_filters; filters.len()])]
        }
    };
    let mut branches = Vec::new();
    for (channels, f) in groups {
        let layers = extractor(spec, channels.len(), &f, &mut rng)?;
        branches.push(Branch { channels, layers, out_channels: *f.last().expect("filters"), out_len });
    }

    let feature_channels: usize = branches.iter().map(|b| b.out_channels).sum();
    let head = match spec.architecture {
        Architecture::McCnn => {
            let mut d1 = Dense::new(feature_channels * out_len, h.dense_hidden)?;
            d1.init(&mut rng);
            let mut d2 = Dense::new(h.dense_hidden, spec.num_labels)?;
            d2.init(&mut rng);
            vec![Layer::Dense(d1), Layer::Relu(Relu::new()), Layer::Dense(d2)]
        }
        Architecture::DeepConvLSTM => {
            let mut lstm = Lstm::new(feature_channels, h.lstm_hidden)?;
            lstm.init(&mut rng);
            let mut d = Dense::new(h.lstm_hidden, spec.num_labels)?;
            d.init(&mut rng);
            vec![Layer::Lstm(lstm), Layer::Dense(d)]
        }
    };
    Ok(FusionModel { spec: spec.clone(), branches, head, cached_batch: None })
}

/// Total number of trainable scalars.
pub fn count_parameters(model: &FusionModel) -> usize {
    model.layers().flat_map(|l| l.params()).map(Tensor::len).sum()
}

impl FusionModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Every layer in serialization order: extractors, then the head.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> + Clone {
        self.branches.iter().flat_map(|b| b.layers.iter()).chain(self.head.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.branches.iter_mut().flat_map(|b| b.layers.iter_mut()).chain(self.head.iter_mut())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(Layer::zero_grad);
    }

    pub fn clear_cache(&mut self) {
        self.layers_mut().for_each(Layer::clear_cache);
        self.cached_batch = None;
    }

    /// Copies parameter and running-statistic values from a same-shaped model.
    pub fn copy_values_from(&mut self, other: &FusionModel) {
        let sources: Vec<Vec<f64>> =
            other.layers().flat_map(|l| l.tensors().into_iter().map(|(_, t, _)| t.data().to_vec())).collect();
        let mut it = sources.into_iter();
        for layer in self.layers_mut() {
            for (_, t, _) in layer.tensors_mut() {
                t.data_mut().copy_from_slice(&it.next().expect("same architecture"));
            }
        }
        for (dst, src) in self.layers_mut().zip(other.layers()) {
            if let (Layer::BatchNorm1d(d), Layer::BatchNorm1d(s)) = (dst, src) {
                d.set_stats_ready(s.stats_ready());
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let expected = self.spec.input_layout.len();
        match x.shape() {
            &[b, w, c] if w == self.spec.window_len && c == expected => Ok(b),
            &[_, _, c] if c != expected => Err(ModelError::ChannelMismatch { expected, got: c }),
            s => Err(NnError::Shape {
                op: "fusion model",
                detail: format!("expected [B × {} × {expected}], got {s:?}", self.spec.window_len),
            }
            .into()),
        }
    }

    fn combine(&self, feats: &[Tensor], batch: usize) -> Tensor {
        match self.spec.architecture {
            Architecture::McCnn => {
                let width: usize = feats.iter().map(|f| f.len() / batch).sum();
                let mut out = Vec::with_capacity(batch * width);
                for b in 0..batch {
                    for f in feats {
                        let per = f.len() / batch;
                        out.extend_from_slice(&f.data()[b * per..(b + 1) * per]);
                    }
                }
                Tensor::new(vec![batch, width], out).expect("flat features")
            }
            Architecture::DeepConvLSTM => {
                let steps = feats[0].shape()[2];
                let total: usize = feats.iter().map(|f| f.shape()[1]).sum();
                let mut out = vec![0.0; batch * steps * total];
                let mut offset = 0;
                for f in feats {
                    let fc = f.shape()[1];
                    let d = f.data();
                    for b in 0..batch {
                        for c in 0..fc {
                            for t in 0..steps {
                                out[(b * steps + t) * total + offset + c] = d[(b * fc + c) * steps + t];
                            }
                        }
                    }
                    offset += fc;
                }
                Tensor::new(vec![batch, steps, total], out).expect("sequence features")
            }
        }
    }

    fn split(&self, grad: &Tensor, batch: usize) -> Vec<Tensor> {
        let mut parts = Vec::with_capacity(self.branches.len());
        match self.spec.architecture {
            Architecture::McCnn => {
                let width = grad.shape()[1];
                let mut offset = 0;
                for br in &self.branches {
                    let per = br.out_channels * br.out_len;
                    let mut g = Vec::with_capacity(batch * per);
                    for b in 0..batch {
                        g.extend_from_slice(&grad.data()[b * width + offset..b * width + offset + per]);
                    }
                    parts.push(Tensor::new(vec![batch, br.out_channels, br.out_len], g).expect("split"));
                    offset += per;
                }
            }
            Architecture::DeepConvLSTM => {
                let (steps, total) = (grad.shape()[1], grad.shape()[2]);
                let d = grad.data();
                let mut offset = 0;
                for br in &self.branches {
                    let fc = br.out_channels;
                    let mut g = vec![0.0; batch * fc * steps];
                    for b in 0..batch {
                        for c in 0..fc {
                            for t in 0..steps {
                                g[(b * fc + c) * steps + t] = d[(b * steps + t) * total + offset + c];
                            }
                        }
                    }
                    parts.push(Tensor::new(vec![batch, fc, steps], g).expect("split"));
                    offset += fc;
                }
            }
        }
        parts
    }

    fn last_step(seq: &Tensor) -> Tensor {
        let (b, t, h) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
        let mut out = Vec::with_capacity(b * h);
        for bi in 0..b {
            out.extend_from_slice(&seq.data()[(bi * t + t - 1) * h..(bi * t + t) * h]);
        }
        Tensor::new(vec![b, h], out).expect("last step")
    }

    /// Logits `[B×K]` for a batch `[B×W×C]`, caching state for [`FusionModel::backward`].
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let mut feats = Vec::with_capacity(self.branches.len());
        for br in &mut self.branches {
            let mut h = br.gather(x);
            for layer in &mut br.layers {
                h = layer.forward(&h, mode, rng)?;
            }
            feats.push(h);
        }
        let mut h = self.combine(&feats, batch);
        match self.spec.architecture {
            Architecture::McCnn => {
                for layer in &mut self.head {
                    h = layer.forward(&h, mode, rng)?;
                }
            }
            Architecture::DeepConvLSTM => {
                let seq = self.head[0].forward(&h, mode, rng)?;
                h = self.head[1].forward(&Self::last_step(&seq), mode, rng)?;
            }
        }
        self.cached_batch = Some(batch);
        Ok(h)
    }

    /// Accumulates parameter gradients and returns the gradient on the input batch.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let batch = self.cached_batch.ok_or(NnError::NoCache("fusion model"))?;
        let mut g = grad_logits.clone_values();
        match self.spec.architecture {
            Architecture::McCnn => {
                for layer in self.head.iter_mut().rev() {
                    g = layer.backward(&g)?;
                }
            }
            Architecture::DeepConvLSTM => {
                let g_last = self.head[1].backward(&g)?;
                let steps = self.branches[0].out_len;
                let hid = g_last.shape()[1];
                let mut seq = vec![0.0; batch * steps * hid];
                for b in 0..batch {
                    seq[(b * steps + steps - 1) * hid..(b * steps + steps) * hid]
                        .copy_from_slice(&g_last.data()[b * hid..(b + 1) * hid]);
                }
                g = self.head[0].backward(&Tensor::new(vec![batch, steps, hid], seq).expect("seq grad"))?;
            }
        }
        let c = self.spec.input_layout.len();
        let w = self.spec.window_len;
        let mut grad_x = vec![0.0; batch * w * c];
        let parts = self.split(&g, batch);
        for (br, mut gb) in self.branches.iter_mut().zip(parts) {
            for layer in br.layers.iter_mut().rev() {
                gb = layer.backward(&gb)?;
            }
            br.scatter_add(&gb, &mut grad_x, c);
        }
        Ok(Tensor::new(vec![batch, w, c], grad_x).expect("input grad"))
    }

    /// Eval-mode extractor outputs `[B×F×L]`, one per branch.
    pub fn branch_features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        self.branches
            .iter()
            .map(|br| {
                let mut h = br.gather(x);
                for layer in &br.layers {
                    h = layer.infer(&h)?;
                }
                Ok(h)
            })
            .collect()
    }

    /// Eval-mode logits; touches no state, so it may run concurrently.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let feats = self.branch_features(x)?;
        let mut h = self.combine(&feats, batch);
        match self.spec.architecture {
            Architecture::McCnn => {
                for layer in &self.head {
                    h = layer.infer(&h)?;
                }
            }
            Architecture::DeepConvLSTM => {
                let seq = self.head[0].infer(&h)?;
                h = self.head[1].infer(&Self::last_step(&seq))?;
            }
        }
        Ok(h)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let meta = json!({ "model_spec": self.spec });
        io::write_params(w, self.layers(), Some(meta))?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (manifest, values) = io::read_params(r)?;
        let spec_value = manifest
            .meta
            .as_ref()
            .and_then(|m| m.get("model_spec"))
            .ok_or_else(|| ModelError::Format("manifest carries no model_spec".into()))?;
        let spec: ModelSpec =
            serde_json::from_value(spec_value.clone()).map_err(|e| ModelError::Format(format!("model_spec: {e}")))?;
        let mut model = build_model(&spec)?;
        io::load_into(model.layers_mut(), &manifest, &values)?;
        Ok(model)
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(NnError::from)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(NnError::from)?;
        Self::load(std::io::BufReader::new(file))
    }
}

/// Cross-entropy of a model on a fixed batch, for gradient checking. Dropout
/// masks come from `seed` on every call.
pub struct ModelObjective {
    pub model: FusionModel,
    pub targets: Vec<usize>,
    pub mode: Mode,
    pub seed: u64,
}

impl Differentiable for ModelObjective {
    fn loss(&mut self, input: &Tensor) -> crate::nn::Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let logits = self.model.forward(input, self.mode, &mut rng).map_err(into_nn)?;
        Ok(softmax_cross_entropy(&logits, &self.targets)?.0)
    }

    fn loss_and_grad(&mut self, input: &Tensor) -> crate::nn::Result<(f64, Tensor)> {
        self.model.zero_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let logits = self.model.forward(input, self.mode, &mut rng).map_err(into_nn)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &self.targets)?;
        let gx = self.model.backward(&grad).map_err(into_nn)?;
        Ok((loss, gx))
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.params_mut()
    }

    fn pattern(&self) -> u64 {
        layer_pattern(self.model.layers())
    }
}

fn into_nn(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(inner) => inner,
        other => NnError::Hyper(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn layout(n_imu: usize, n_bcs: usize) -> Vec<String> {
        (0..n_imu).map(|i| format!("d/acc{i}")).chain((0..n_bcs).map(|i| format!("d{i}/cap"))).collect()
    }

    fn batch(b: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![b, w, c], (0..b * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small(arch: Architecture, fusion: Fusion, imu: usize, bcs: usize) -> ModelSpec {
        let mut spec = ModelSpec::new(arch, fusion, 3, 25, &layout(imu, bcs));
        spec.hyper.filters = Some(match arch {
            Architecture::McCnn => vec![4, 4, 4],
            Architecture::DeepConvLSTM => vec![4, 4],
        });
        spec.hyper.bcs_filters = 2;
        spec.hyper.dense_hidden = 6;
        spec.hyper.lstm_hidden = 5;
        spec
    }

    #[test]
    fn mccnn_early_logit_shape() {
        let spec = ModelSpec::new(Architecture::McCnn, Fusion::EarlyData, 12, 25, &layout(18, 2));
        let model = build_model(&spec).unwrap();
        let mut m = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = m.forward(&batch(3, 25, 20, 1), Mode::Train, &mut rng).unwrap();
        assert_eq!(y.shape(), &[3, 12]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = small(Architecture::DeepConvLSTM, Fusion::LateFeature, 6, 2);
        let a = build_model(&spec).unwrap();
        let b = build_model(&spec).unwrap();
        let flat = |m: &FusionModel| m.layers().flat_map(|l| l.params()).flat_map(|t| t.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
    }

    #[test]
    fn late_split_is_eighteen_plus_two() {
        let spec = ModelSpec::new(Architecture::McCnn, Fusion::LateFeature, 4, 25, &layout(18, 2));
        let m = build_model(&spec).unwrap();
        assert_eq!(m.branches[0].channels.len(), 18);
        assert_eq!(m.branches[1].channels, vec![18, 19]);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let m = build_model(&small(Architecture::McCnn, Fusion::EarlyData, 4, 1)).unwrap();
        assert!(matches!(m.infer(&batch(2, 25, 4, 0)), Err(ModelError::ChannelMismatch { expected: 5, got: 4 })));
    }

    #[test]
    fn parameter_count_matches_manifest() {
        for arch in [Architecture::McCnn, Architecture::DeepConvLSTM] {
            let spec = ModelSpec::new(arch, Fusion::EarlyData, 12, 25, &layout(18, 2));
            let m = build_model(&spec).unwrap();
            let manifest = io::Manifest::describe(m.layers(), None);
            assert_eq!(count_parameters(&m), manifest.trainable_count());
        }
    }

    #[test]
    fn save_load_reproduces_logits() {
        let spec = small(Architecture::DeepConvLSTM, Fusion::LateFeature, 5, 2);
        let mut m = build_model(&spec).unwrap();
        let x = batch(4, 25, 7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.forward(&x, Mode::Train, &mut rng).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = FusionModel::load(buf.as_slice()).unwrap();
        assert_eq!(back.infer(&x).unwrap().data(), m.infer(&x).unwrap().data());
    }
}
