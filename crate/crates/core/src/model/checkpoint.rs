//! Checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 8     | magic `SCNNCKPT`                 |
//! | 4     | format version (`u32`)           |
//! | 8     | manifest length in bytes (`u64`) |
//! | n     | UTF-8 JSON [`Manifest`]          |
//! | rest  | `f32` payload, row-major         |
//!
//! Tensors appear in the payload in manifest order with contiguous offsets.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::LayerKind;
use crate::tensor::Element;

use super::{ModelGraph, ModelSpec};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub stage: Option<u8>,
    pub epoch: Option<usize>,
    pub class_names: Vec<String>,
    pub metrics: Option<crate::train::EpochMetrics>,
    /// Preprocessing the model was trained with.
    #[serde(default = "default_rescale")]
    pub rescale: f64,
    #[serde(default)]
    pub standardize: bool,
}

fn default_rescale() -> f64 {
    crate::data::RESCALE
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        CheckpointMeta {
            stage: None,
            epoch: None,
            class_names: Vec::new(),
            metrics: None,
            rescale: default_rescale(),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub layer: String,
    pub kind: Option<LayerKind>,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelSpec,
    #[serde(flatten)]
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn payload_len(&self) -> u64 {
        self.tensors.iter().map(|t| t.nbytes).sum()
    }
}

/// Writes `model` to `path`. Values are rounded to `f32`.
pub fn save<T: Element>(model: &ModelGraph<T>, meta: &CheckpointMeta, path: &Path) -> Result<Manifest> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (layer, kind, slot) in model.named_params() {
        let offset = payload.len() as u64;
        for v in slot.value.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: format!("{layer}/{}", slot.name),
            layer,
            kind,
            shape: slot.value.dims().to_vec(),
            trainable: slot.trainable(),
            offset,
            nbytes: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        model: model.spec().clone(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);

    let tmp = path.with_extension("ckpt.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

fn split(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Load("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Load(format!("unsupported checkpoint version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let rest = &bytes[HEADER_LEN..];
    if mlen > rest.len() as u64 {
        return Err(Error::Load("manifest length exceeds file size".into()));
    }
    let (json, payload) = rest.split_at(mlen as usize);
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| Error::Load(format!("bad manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::Load("manifest version disagrees with header".into()));
    }
    let mut expected = 0u64;
    for t in &manifest.tensors {
        let numel: u64 = t.shape.iter().map(|&d| d as u64).product();
        if t.offset != expected || t.nbytes != numel * 4 {
            return Err(Error::Load(format!("tensor {} has inconsistent offsets", t.name)));
        }
        expected += t.nbytes;
    }
    if payload.len() as u64 != expected {
        return Err(Error::Load(format!(
            "payload is {} bytes, manifest describes {expected}",
            payload.len()
        )));
    }
    Ok((manifest, payload))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(split(&read(path)?)?.0)
}

/// Restores parameters, statistics and trainable flags into `model`.
/// Nothing is modified unless the whole file validates against it.
pub fn load<T: Element>(path: &Path, model: &mut ModelGraph<T>) -> Result<Manifest> {
    let bytes = read(path)?;
    let (manifest, payload) = split(&bytes)?;
    let named = model.named_params();
    if named.len() != manifest.tensors.len() {
        return Err(Error::Load(format!(
            "checkpoint has {} tensors, model has {}",
            manifest.tensors.len(),
            named.len()
        )));
    }
    let mut decoded = Vec::with_capacity(named.len());
    for ((layer, _, slot), entry) in named.iter().zip(&manifest.tensors) {
        let name = format!("{layer}/{}", slot.name);
        if entry.name != name {
            return Err(Error::Load(format!(
                "expected tensor {name}, checkpoint has {}",
                entry.name
            )));
        }
        if entry.shape != slot.value.dims() {
            return Err(Error::Shape(format!(
                "layer {layer}: checkpoint tensor {} has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                slot.value.dims()
            )));
        }
        let raw = &payload[entry.offset as usize..(entry.offset + entry.nbytes) as usize];
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        decoded.push((values, entry.trainable));
    }
    for (slot, (values, trainable)) in model.params_mut().into_iter().zip(decoded) {
        slot.value.data_mut().copy_from_slice(&values);
        slot.set_trainable(trainable);
        slot.zero_grad();
    }
    Ok(manifest)
}
