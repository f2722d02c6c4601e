//! Binary parameter files.
//!
//! Layout: the 4-byte magic `CFH1`, a little-endian `u64` byte length, that many
//! bytes of UTF-8 JSON manifest, then every tensor's values as little-endian
//! `f64` in manifest order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LayerKind, Layer, NnError, Result};

pub const MAGIC: &[u8; 4] = b"CFH1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: LayerKind,
    pub hyper: Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
    pub layers: Vec<LayerEntry>,
}

impl Manifest {
    pub fn describe<'a>(layers: impl IntoIterator<Item = &'a Layer>, meta: Option<Value>) -> Self {
        let layers = layers
            .into_iter()
            .map(|l| LayerEntry {
                kind: l.kind(),
                hyper: l.hyper(),
                tensors: l
                    .tensors()
                    .into_iter()
                    .map(|(name, t, trainable)| TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), trainable })
                    .collect(),
            })
            .collect();
        Self { version: VERSION, meta, layers }
    }

    /// Sum of trainable tensor sizes.
    pub fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.tensors)
            .filter(|t| t.trainable)
            .map(|t| t.shape.iter().product::<usize>())
            .sum()
    }
}

pub fn write_params<'a, W: Write>(
    mut w: W,
    layers: impl IntoIterator<Item = &'a Layer> + Clone,
    meta: Option<Value>,
) -> Result<()> {
    let manifest = Manifest::describe(layers.clone(), meta);
    let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for layer in layers {
        for (_, t, _) in layer.tensors() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a parameter file into its manifest and one value vector per tensor.
pub fn read_params<R: Read>(mut r: R) -> Result<(Manifest, Vec<Vec<f64>>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(NnError::Format(format!("manifest length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| NnError::Format(format!("manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(NnError::Format(format!("unsupported version {}", manifest.version)));
    }
    let mut values = Vec::new();
    let mut buf = [0u8; 8];
    for entry in manifest.layers.iter().flat_map(|l| &l.tensors) {
        let n: usize = entry.shape.iter().product();
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            v.push(f64::from_le_bytes(buf));
        }
        values.push(v);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NnError::Format(format!("{} trailing bytes after tensor data", rest.len())));
    }
    Ok((manifest, values))
}

/// Copies file contents into already-built layers after checking that kinds and
/// shapes agree.
pub fn load_into<'a>(
    layers: impl IntoIterator<Item = &'a mut Layer>,
    manifest: &Manifest,
    values: &[Vec<f64>],
) -> Result<()> {
    let layers: Vec<&mut Layer> = layers.into_iter().collect();
    if layers.len() != manifest.layers.len() {
        return Err(NnError::Format(format!(
            "file has {} layers, model has {}",
            manifest.layers.len(),
            layers.len()
        )));
    }
    let mut values = values.iter();
    for (i, (layer, entry)) in layers.into_iter().zip(&manifest.layers).enumerate() {
        if layer.kind() != entry.kind {
            return Err(NnError::Format(format!("layer {i}: file has {:?}, model has {:?}", entry.kind, layer.kind())));
        }
        if layer.hyper() != entry.hyper {
            // stats_ready is state, not structure; everything else must match
            if let (Layer::BatchNorm1d(bn), Some(ready)) = (&mut *layer, entry.hyper.get("stats_ready")) {
                let mut expected = entry.hyper.clone();
                expected["stats_ready"] = Value::Bool(bn.stats_ready());
                if expected != layer_hyper_of(bn) {
                    return Err(NnError::Format(format!("layer {i}: hyperparameters differ")));
                }
                bn.set_stats_ready(ready.as_bool().unwrap_or(false));
            } else {
                return Err(NnError::Format(format!(
                    "layer {i}: hyperparameters differ ({} vs {})",
                    entry.hyper,
                    layer.hyper()
                )));
            }
        }
        let tensors = layer.tensors_mut();
        if tensors.len() != entry.tensors.len() {
            return Err(NnError::Format(format!("layer {i}: tensor count differs")));
        }
        for ((name, t, _), te) in tensors.into_iter().zip(&entry.tensors) {
            if name != te.name || t.shape() != te.shape.as_slice() {
                return Err(NnError::Format(format!(
                    "layer {i}: tensor {name} {:?} vs file {} {:?}",
                    t.shape(),
                    te.name,
                    te.shape
                )));
            }
            let v = values.next().ok_or_else(|| NnError::Format("missing tensor data".into()))?;
            t.data_mut().copy_from_slice(v);
        }
    }
    Ok(())
}

fn layer_hyper_of(bn: &super::BatchNorm1d) -> Value {
    serde_json::json!({ "eps": bn.eps(), "momentum": bn.momentum(), "stats_ready": bn.stats_ready() })
}
