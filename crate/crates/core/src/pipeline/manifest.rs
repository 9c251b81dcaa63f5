//! Stage manifests: what a stage ran with, what it read and what it wrote, all by digest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GenRecError, Result};

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(digest_bytes(&std::fs::read(path)?))
}

/// Digest of a serializable value through its canonical JSON form.
pub fn digest_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(digest_bytes(&serde_json::to_vec(value)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    /// Stage key such as `train-sft/sft-pagewise`.
    pub stage: String,
    /// Digest of the config sections the stage reads.
    pub config_hash: String,
    /// Upstream stage key → digest of its manifest file when this stage ran.
    pub upstream: BTreeMap<String, String>,
    /// Output path relative to the run directory → content digest.
    pub outputs: BTreeMap<String, String>,
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join("manifests").join(format!("{}.json", stage.replace('/', ".")))
}

impl StageManifest {
    pub fn write(&self, out: &Path) -> Result<()> {
        let path = manifest_path(out, &self.stage);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a stage's manifest; a missing file means the stage has not run.
    pub fn read(out: &Path, stage: &str) -> Result<Self> {
        let path = manifest_path(out, stage);
        if !path.exists() {
            return Err(GenRecError::MissingArtifact {
                stage: stage.to_string(),
                path,
            });
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?)
    }

    /// Checks the recorded outputs are still on disk unchanged.
    pub fn verify_outputs(&self, out: &Path) -> Result<()> {
        for (rel, digest) in &self.outputs {
            let path = out.join(rel);
            if !path.exists() {
                return Err(GenRecError::MissingArtifact {
                    stage: self.stage.clone(),
                    path,
                });
            }
            if &digest_file(&path)? != digest {
                return Err(GenRecError::StalePipeline(format!(
                    "{rel} changed after stage `{}` wrote it",
                    self.stage
                )));
            }
        }
        Ok(())
    }
}
