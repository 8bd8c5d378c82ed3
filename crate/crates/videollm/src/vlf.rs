//! The VLF frame-feature container.
//!
//! ```text
//! "VLF1" · version u32 (=1) · F u32 · d_v u32 · fps f32 · F·d_v × f32
//! ```
//!
//! All numbers are little-endian; features are row-major, one row per frame.

use std::io::{Read, Write};
use std::path::Path;

use videollm_core::ingest::FrameFeatures;
use videollm_core::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"VLF1";
pub const VERSION: u32 = 1;
const HEADER: usize = 20;

pub fn encode(features: &FrameFeatures) -> Vec<u8> {
    let (f, d) = (features.frames(), features.dim());
    let mut out = Vec::with_capacity(HEADER + 4 * f * d);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&features.fps().to_le_bytes());
    for x in features.features().data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a VLF image; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<FrameFeatures> {
    if bytes.len() < HEADER {
        return Err(CliError::Truncated {
            path: path.to_path_buf(),
            reason: format!("{} header bytes, need {HEADER}", bytes.len()),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(CliError::format(path, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(CliError::format(path, format!("unsupported version {version}")));
    }
    let (f, d) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let fps = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    let want = f
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CliError::format(path, format!("header size {f}×{d} overflows")))?;
    let payload = &bytes[HEADER..];
    if payload.len() < want {
        return Err(CliError::Truncated {
            path: path.to_path_buf(),
            reason: format!("header promises {f}×{d} values ({want} bytes), payload has {}", payload.len()),
        });
    }
    if payload.len() > want {
        return Err(CliError::format(path, format!("{} trailing bytes", payload.len() - want)));
    }
    let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let tensor = Tensor::from_vec(&[f, d], data).map_err(|e| CliError::format(path, e.to_string()))?;
    FrameFeatures::new(tensor, fps).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn store_features(path: &Path, features: &FrameFeatures) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| CliError::write(path, e))?;
    file.write_all(&encode(features)).map_err(|e| CliError::write(path, e))
}

pub fn load_features(path: &Path) -> Result<FrameFeatures> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::read(path, e))?;
    decode(&bytes, path)
}
