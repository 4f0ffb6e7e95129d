//! Single-file checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4    magic "DRNK"
//! bytes 4..8    format version (u32)
//! bytes 8..12   manifest length in bytes (u32)
//! bytes 12..    manifest: JSON with the model config and one entry per
//!               tensor (name, shape, byte offset, byte length)
//! then          payload: raw f32 little-endian tensor data, contiguous,
//!               in manifest order
//! ```
//!
//! Loading verifies magic, version, manifest consistency (offsets, lengths,
//! and the exact tensor set the config implies) and payload bounds, each with
//! its own error so a corrupt file tells you what went wrong.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams, NamedTensor};

const MAGIC: &[u8; 4] = b"DRNK";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("manifest is inconsistent: {0}")]
    BadManifest(String),
    #[error("payload out of bounds for tensor {name}: needs bytes up to {end}, file has {available}")]
    PayloadBounds {
        name: String,
        end: usize,
        available: usize,
    },
    #[error("bad model config in checkpoint: {0}")]
    BadConfig(String),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(model.tensors().len());
    let mut offset = 0usize;
    for t in model.tensors() {
        let len = t.data.len() * 4;
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
            len,
        });
        offset += len;
    }
    let manifest = Manifest {
        config: model.config,
        tensors: entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| CheckpointError::BadManifest(e.to_string()))?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&manifest_bytes)?;
    for t in model.tensors() {
        for v in &t.data {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(CheckpointError::BadMagic);
    }
    if &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + manifest_len;
    if bytes.len() < payload_start {
        return Err(CheckpointError::BadManifest(format!(
            "declared manifest of {manifest_len} bytes overruns the file"
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..payload_start])
        .map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
    manifest
        .config
        .validate()
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;

    // The tensor set must be exactly what the config implies, in order.
    let expected = manifest.config.tensor_layout();
    if manifest.tensors.len() != expected.len() {
        return Err(CheckpointError::BadManifest(format!(
            "{} tensors in manifest, config implies {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let payload = &bytes[payload_start..];
    let mut running = 0usize;
    let mut tensors = Vec::with_capacity(expected.len());
    for (entry, (name, shape)) in manifest.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(CheckpointError::BadManifest(format!(
                "tensor {} with shape {:?} where config implies {} with shape {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        let count: usize = entry.shape.iter().product();
        if entry.len != count * 4 {
            return Err(CheckpointError::BadManifest(format!(
                "tensor {} declares {} bytes for shape {:?}",
                entry.name, entry.len, entry.shape
            )));
        }
        if entry.offset != running {
            return Err(CheckpointError::BadManifest(format!(
                "tensor {} at offset {} where {} expected",
                entry.name, entry.offset, running
            )));
        }
        let end = entry.offset + entry.len;
        if end > payload.len() {
            return Err(CheckpointError::PayloadBounds {
                name: entry.name.clone(),
                end,
                available: payload.len(),
            });
        }
        let data: Vec<f32> = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
            data,
        });
        running = end;
    }
    if payload.len() != running {
        return Err(CheckpointError::BadManifest(format!(
            "payload has {} bytes, manifest accounts for {running}",
            payload.len()
        )));
    }
    ModelParams::from_tensors(manifest.config, tensors)
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))
}
