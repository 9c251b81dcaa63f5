//! Binary policy checkpoints: `GRCK`, a format version, a JSON manifest describing every
//! tensor, then the flat `f32` little-endian parameter buffer in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamLayout;
use super::{Model, ModelConfig, TensorSpec};
use crate::error::{GenRecError, Result};

const MAGIC: &[u8; 4] = b"GRCK";
const VERSION: u32 = 1;

/// Manifest stored ahead of the tensor payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub config: ModelConfig,
    pub step: u64,
    pub tensors: Vec<TensorSpec>,
    /// Free-form provenance (training arm, config hash, source checkpoint).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model<f32>, meta: &serde_json::Value) -> Result<()> {
    let info = CheckpointInfo {
        config: model.config().clone(),
        step: model.step,
        tensors: model.tensors().to_vec(),
        meta: meta.clone(),
    };
    let manifest = serde_json::to_vec(&info)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(&manifest)?;
    let mut buf = Vec::with_capacity(model.params.len() * 4);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Model<f32>, CheckpointInfo)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GenRecError::Format("not a checkpoint file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(GenRecError::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut manifest = vec![0u8; len];
    r.read_exact(&mut manifest)?;
    let info: CheckpointInfo = serde_json::from_slice(&manifest)?;
    let layout = ParamLayout::new(&info.config);
    if layout.tensors != info.tensors {
        return Err(GenRecError::Format("tensor manifest does not match the model config".into()));
    }
    let mut raw = vec![0u8; layout.total * 4];
    r.read_exact(&mut raw)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(GenRecError::Format(format!("{} trailing bytes after tensors", rest.len())));
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let model = Model::from_parts(info.config.clone(), params, info.step)?;
    Ok((model, info))
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>, meta: &serde_json::Value) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointInfo)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
