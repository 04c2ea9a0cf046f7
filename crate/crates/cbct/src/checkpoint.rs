//! Model checkpoints: an 8-byte little-endian manifest length, the JSON
//! manifest, then one flat little-endian f32 blob holding every parameter
//! followed by its momentum velocity.

use std::fs;
use std::path::Path;

use cbct_core::model::{Model, ModelConfig};
use cbct_core::tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub path: String,
    pub shape: Vec<usize>,
    /// Byte offset of the values within the blob.
    pub offset: usize,
    /// Byte offset of the optimiser velocity within the blob.
    pub velocity_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    pub config: ModelConfig,
    /// Free-form training state (epochs done, training config, seed).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: usize,
}

const FORMAT: u32 = 1;

pub fn encode(model: &Model<f32>, meta: serde_json::Value) -> CliResult<Vec<u8>> {
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    for (name, value, velocity) in model.params().iter() {
        let offset = blob.len();
        blob.extend(value.data().iter().flat_map(|v| v.to_le_bytes()));
        let velocity_offset = blob.len();
        blob.extend(velocity.iter().flat_map(|v| v.to_le_bytes()));
        tensors.push(TensorEntry { path: name.to_string(), shape: value.shape().to_vec(), offset, velocity_offset });
    }
    let manifest = CheckpointManifest { format: FORMAT, config: model.config().clone(), meta, tensors, blob_bytes: blob.len() };
    let json = serde_json::to_vec(&manifest).map_err(|e| CliError::runtime(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(json);
    out.extend(blob);
    Ok(out)
}

fn floats(blob: &[u8], offset: usize, n: usize, what: &str) -> CliResult<Vec<f32>> {
    let bytes = blob
        .get(offset..offset + 4 * n)
        .ok_or_else(|| CliError::invalid(format!("checkpoint: `{what}` runs past the end of the blob")))?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn decode(bytes: &[u8]) -> CliResult<(Model<f32>, serde_json::Value)> {
    let len = bytes.get(..8).ok_or_else(|| CliError::invalid("checkpoint: truncated header"))?;
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| CliError::invalid("checkpoint: truncated manifest"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(json)?;
    if manifest.format != FORMAT {
        return Err(CliError::invalid(format!("checkpoint: unsupported format {}", manifest.format)));
    }
    let blob = &bytes[8 + len..];
    if blob.len() != manifest.blob_bytes {
        return Err(CliError::invalid(format!("checkpoint: blob has {} bytes, manifest says {}", blob.len(), manifest.blob_bytes)));
    }
    let mut store = ParamStore::new();
    for t in &manifest.tensors {
        let n = t.shape.iter().product();
        let value = Tensor::new(t.shape.clone(), floats(blob, t.offset, n, &t.path)?)?;
        store.insert(&t.path, value)?;
        store.set_velocity(&t.path, &floats(blob, t.velocity_offset, n, &t.path)?)?;
    }
    Ok((Model::from_params(manifest.config, store)?, manifest.meta))
}

pub fn save(path: &Path, model: &Model<f32>, meta: serde_json::Value) -> CliResult<()> {
    fs::write(path, encode(model, meta)?).map_err(|e| CliError::write(path, e))
}

pub fn load(path: &Path) -> CliResult<(Model<f32>, serde_json::Value)> {
    decode(&fs::read(path).map_err(|e| CliError::read(path, e))?)
}
