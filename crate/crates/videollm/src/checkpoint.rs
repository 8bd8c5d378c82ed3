//! Checkpoint container.
//!
//! ```text
//! "VLCK" · version u32 · manifest length u64 · manifest JSON · blobs
//! ```
//!
//! The manifest carries the model and training configs, the step count, the
//! sampler state and one entry per parameter. Blobs are the parameter values
//! as little-endian f32, concatenated in canonical order: the registration
//! order of [`VideoLlm::build`](videollm_core::model::VideoLlm::build), which
//! is reasoner, translator, adapters, text table and heads, each in its own
//! fixed sub-order. Every blob carries a SHA-256 hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use videollm_core::model::{ModelConfig, VideoLlm};
use videollm_core::numerics::ParamStore;
use videollm_core::trainer::{Checkpoint, SamplerState, TrainConfig};
use videollm_core::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"VLCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset into the blob area, in f32 values.
    pub offset: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: usize,
    pub sampler: SamplerState,
    pub params: Vec<ParamEntry>,
    /// Hash of the whole blob area.
    pub sha256: String,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn blob(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn manifest(ckpt: &Checkpoint) -> (Manifest, Vec<u8>) {
    let mut blobs = Vec::new();
    let mut params = Vec::with_capacity(ckpt.store.len());
    for (id, p) in ckpt.store.iter() {
        let b = blob(&p.value);
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            trainable: ckpt.store.is_trainable(id),
            offset: blobs.len() / 4,
            sha256: digest(&b),
        });
        blobs.extend_from_slice(&b);
    }
    let m = Manifest {
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        step: ckpt.step,
        sampler: ckpt.sampler,
        params,
        sha256: digest(&blobs),
    };
    (m, blobs)
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let (m, blobs) = manifest(ckpt);
    let json = serde_json::to_vec(&m).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + blobs.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    out
}

/// Parses and verifies a checkpoint image; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Checkpoint, VideoLlm)> {
    let truncated = |reason: String| CliError::Truncated {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 {
        return Err(truncated(format!("{} header bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(CliError::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CliError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(truncated(format!("manifest of {len} bytes, {} present", body.len())));
    }
    let m: Manifest = serde_json::from_slice(&body[..len]).map_err(|e| CliError::format(path, format!("manifest: {e}")))?;
    let blobs = &body[len..];
    if digest(blobs) != m.sha256 {
        let need: usize = m.params.iter().map(|p| p.shape.iter().product::<usize>() * 4).sum();
        if blobs.len() < need {
            return Err(truncated(format!("{} parameter bytes, manifest lists {need}", blobs.len())));
        }
        return Err(CliError::format(path, "parameter data does not match its hash"));
    }
    let mut store = ParamStore::new();
    for p in &m.params {
        let n: usize = p.shape.iter().product();
        let (lo, hi) = (p.offset * 4, (p.offset + n) * 4);
        let raw = blobs
            .get(lo..hi)
            .ok_or_else(|| CliError::format(path, format!("parameter {} lies outside the data", p.name)))?;
        if digest(raw) != p.sha256 {
            return Err(CliError::format(path, format!("parameter {} does not match its hash", p.name)));
        }
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::from_vec(&p.shape, data).map_err(|e| CliError::format(path, e.to_string()))?;
        store.add(p.name.clone(), t, p.trainable);
    }
    let ckpt = Checkpoint {
        model: m.model,
        train: m.train,
        step: m.step,
        sampler: m.sampler,
        store,
    };
    let model = ckpt.restore().map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((ckpt, model))
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt)).map_err(|e| CliError::write(path, e))
}

pub fn load(path: &Path) -> Result<(Checkpoint, VideoLlm)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::read(path, e))?;
    decode(&bytes, path)
}
