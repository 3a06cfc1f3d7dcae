//! Single-file checkpoint archive for both networks.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   "FARNETCK"
//! version  u32 LE    1
//! length   u64 LE    byte length of the JSON index
//! index    UTF-8 JSON {"meta": {...}, "tensors": [{"name", "shape", "trainable", "offset", "count"}]}
//! data     f32 LE    tensor values; `offset` and `count` are in elements from the start of this block
//! ```
//!
//! Tensor names are module paths prefixed with `aug/` or `rec/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{FarNet, TrainConfig};

pub const MAGIC: &[u8; 8] = b"FARNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `(C, H, W)` of the training samples.
    pub sample_shape: [usize; 3],
    pub n_classes: usize,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

fn prefixed<'a, T: Scalar>(models: &'a FarNet<T>) -> impl Iterator<Item = (String, &'a Tensor<T>, bool)> {
    let tag = |p: &'static str, s: &'a ParamStore<T>| s.entries().iter().map(move |e| (format!("{p}/{}", e.name), &e.value, e.trainable));
    tag("aug", &models.aug.store).chain(tag("rec", &models.rec.store))
}

/// Serializes both networks and their metadata.
pub fn encode<T: Scalar>(models: &FarNet<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for (name, value, trainable) in prefixed(models) {
        tensors.push(TensorEntry {
            name,
            shape: value.shape().to_vec(),
            trainable,
            offset,
            count: value.len(),
        });
        offset += value.len();
        data.extend(value.data().iter().flat_map(|v| v.to_f32_lossy().to_le_bytes()));
    }
    let index = serde_json::to_vec(&Index {
        meta: meta.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(20 + index.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&index);
    out.extend_from_slice(&data);
    Ok(out)
}

/// Rebuilds both networks from an archive.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(FarNet<T>, CheckpointMeta)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let index_end = 20usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated index"))?;
    let index: Index = serde_json::from_slice(&bytes[20..index_end])?;
    let data = &bytes[index_end..];
    let meta = index.meta;
    let mut models = FarNet::new(meta.sample_shape[0], meta.n_classes, &meta.config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = prefixed(&models).map(|(n, v, _)| (n, v.shape().to_vec())).collect();
    if expected.len() != index.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "archive holds {} tensors, model has {}",
            index.tensors.len(),
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&index.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match model tensor {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let end = (entry.offset + entry.count) * 4;
        if end > data.len() || entry.count != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("tensor {name} lies outside the data block")));
        }
        let vals = data[entry.offset * 4..end]
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        values.push(Tensor::from_vec(shape, vals)?);
    }
    let mut it = values.into_iter();
    for e in models.aug.store.entries_mut().iter_mut().chain(models.rec.store.entries_mut()) {
        e.value = it.next().expect("counted");
    }
    Ok((models, meta))
}

pub fn save<T: Scalar>(path: &Path, models: &FarNet<T>, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode(models, meta)?).at(path)
}

pub fn load<T: Scalar>(path: &Path) -> Result<(FarNet<T>, CheckpointMeta)> {
    decode(&fs::read(path).at(path)?)
}
