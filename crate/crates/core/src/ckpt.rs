//! Checkpoints: `manifest.json` plus a raw little-endian `f32` payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelShape};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "payload.bin";
/// Full config of the run that wrote the checkpoint.
pub const RUN_CONFIG: &str = "run_config.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// SHA-256 of the configuration that produced the tensors.
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: ckpt.config_hash.clone(),
        tensors: entries,
    };
    fs::write(dir.join(PAYLOAD), payload)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Migration {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw)?;
    let payload = fs::read(dir.join(PAYLOAD))?;
    decode(&manifest, &payload)
}

/// Rebuilds tensors from a manifest and its payload, checking that the
/// entries tile the payload exactly.
pub fn decode(manifest: &Manifest, payload: &[u8]) -> Result<Checkpoint> {
    let mut expected = 0u64;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let numel: usize = e.shape.iter().product();
        let len = 4 * numel as u64;
        if e.offset != expected {
            return Err(Error::Integrity {
                tensor: e.name.clone(),
                reason: format!("offset {} but previous tensors end at {expected}", e.offset),
            });
        }
        let end = e.offset + len;
        if end > payload.len() as u64 {
            return Err(Error::Integrity {
                tensor: e.name.clone(),
                reason: format!("needs bytes {}..{end}, payload has {}", e.offset, payload.len()),
            });
        }
        let data = payload[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        expected = end;
    }
    if expected != payload.len() as u64 {
        let last = manifest.tensors.last().map(|e| e.name.clone()).unwrap_or_default();
        return Err(Error::Integrity {
            tensor: last,
            reason: format!("{} trailing payload bytes", payload.len() as u64 - expected),
        });
    }
    Ok(Checkpoint {
        config_hash: manifest.config_hash.clone(),
        tensors,
    })
}

/// Saves model parameters together with the config that shapes them.
pub fn save_model(dir: &Path, cfg: &RunConfig, model: &Model<f32>) -> Result<()> {
    save(
        dir,
        &Checkpoint {
            config_hash: cfg.hash(),
            tensors: model.named(),
        },
    )?;
    fs::write(dir.join(RUN_CONFIG), cfg.to_json_pretty() + "\n")?;
    Ok(())
}

/// Loads a checkpoint written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<(RunConfig, Model<f32>)> {
    let ckpt = load(dir)?;
    let text = fs::read_to_string(dir.join(RUN_CONFIG))?;
    let cfg = RunConfig::from_json(serde_json::from_str(&text)?, None)?;
    if cfg.hash() != ckpt.config_hash {
        return Err(Error::Integrity {
            tensor: RUN_CONFIG.into(),
            reason: "config hash does not match the manifest".into(),
        });
    }
    let model = Model::from_named(ModelShape::from_config(&cfg), ckpt.tensors)?;
    Ok((cfg, model))
}
