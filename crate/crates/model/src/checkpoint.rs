//! Checkpoint files: magic, little-endian `u32` header length, JSON header
//! (model config and tensor names/shapes), then every tensor as
//! little-endian `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::{Model, ModelConfig};
use crate::params::round_f32;
use crate::{ModelError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSUCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        tensors: model
            .store
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.shape.clone() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.store.params() {
        for &v in &p.value {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let fmt = |m: &str| ModelError::Format(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt("not a checkpoint (bad magic)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| fmt("truncated checkpoint header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| ModelError::Format(format!("checkpoint header: {e}")))?;
    let mut model = Model::new(header.config)?;
    if header.tensors.len() != model.store.len() {
        return Err(ModelError::Format(format!(
            "checkpoint has {} tensors, model has {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    let mut data = &bytes[12 + hlen..];
    for t in &header.tensors {
        let id = model
            .store
            .id(&t.name)
            .ok_or_else(|| ModelError::Format(format!("unknown tensor {}", t.name)))?;
        let p = model.store.get_mut(id);
        if p.shape != t.shape {
            return Err(ModelError::Format(format!("tensor {} has shape {:?}, expected {:?}", t.name, t.shape, p.shape)));
        }
        let n = p.value.len();
        if data.len() < 4 * n {
            return Err(fmt("truncated checkpoint data"));
        }
        for (v, b) in p.value.iter_mut().zip(data[..4 * n].chunks_exact(4)) {
            *v = round_f32(f32::from_le_bytes(b.try_into().unwrap()) as f64);
        }
        data = &data[4 * n..];
    }
    if !data.is_empty() {
        return Err(fmt("trailing bytes after checkpoint data"));
    }
    Ok(model)
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
