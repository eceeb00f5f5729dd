//! Checkpoint file format.
//!
//! Layout: 8-byte magic `LEXGEN01`, a little-endian u64 manifest byte
//! length, a JSON manifest, then the payload: every tensor row-major as
//! little-endian f32, concatenated in manifest order. The manifest
//! carries the model configuration, the vocab token list, per-tensor
//! byte spans, and a SHA-256 of the payload, so the file is readable
//! from any language and corruption is caught before parameters load.
//!
//! Parameters train as f64 but are stored quantized to f32; loading
//! widens back to f64. Widening is exact, so load∘save is a bit-exact
//! fixed point after the first save.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Vocab;
use crate::model::{ModelConfig, ParamSet};
use crate::tensor::Tensor;
use crate::{LexError, Result};

const MAGIC: &[u8; 8] = b"LEXGEN01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset from the start of the payload.
    offset: u64,
    /// Byte length.
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    tensors: Vec<TensorRecord>,
    vocab: Vec<String>,
    step: u64,
    val_loss: f64,
    payload_sha256: String,
}

/// A loaded checkpoint: parameters widened to f64 plus the metadata
/// needed to resume or predict.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet<f64>,
    pub vocab: Vocab,
    pub step: u64,
    pub val_loss: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_checkpoint(
    params: &ParamSet<f64>,
    vocab: &Vocab,
    step: u64,
    val_loss: f64,
    path: &Path,
) -> Result<()> {
    if !val_loss.is_finite() {
        // JSON has no Infinity/NaN literal.
        return Err(LexError::Config(format!(
            "val_loss must be finite to checkpoint, got {val_loss}"
        )));
    }
    let mut payload = Vec::new();
    let mut records = Vec::new();
    for (name, tensor) in params.iter() {
        let offset = payload.len() as u64;
        for v in tensor.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        records.push(TensorRecord {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            dtype: "f32".to_string(),
            offset,
            len: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: params.cfg.clone(),
        tensors: records,
        vocab: vocab.tokens().to_vec(),
        step,
        val_loss,
        payload_sha256: sha256_hex(&payload),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| LexError::Internal(format!("manifest serialization failed: {e}")))?;
    let mut file = Vec::with_capacity(16 + manifest_bytes.len() + payload.len());
    file.extend_from_slice(MAGIC);
    file.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    file.extend_from_slice(&manifest_bytes);
    file.extend_from_slice(&payload);
    std::fs::write(path, file)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(LexError::Checkpoint(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize.checked_add(manifest_len).filter(|&p| p <= bytes.len());
    let Some(payload_start) = payload_start else {
        return Err(LexError::Checkpoint("manifest length exceeds file size".into()));
    };
    let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| LexError::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(LexError::Checkpoint(format!(
            "unsupported format version {} (this build reads {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let payload = &bytes[payload_start..];
    if sha256_hex(payload) != manifest.payload_sha256 {
        return Err(LexError::Checkpoint(
            "payload hash mismatch: file is corrupt or truncated".into(),
        ));
    }

    let mut map: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
    let mut cursor = 0u64;
    for rec in &manifest.tensors {
        if rec.dtype != "f32" {
            return Err(LexError::Checkpoint(format!(
                "tensor '{}' has unsupported dtype '{}'",
                rec.name, rec.dtype
            )));
        }
        let numel: usize = rec.shape.iter().product();
        if rec.offset != cursor || rec.len != (numel * 4) as u64 {
            return Err(LexError::Checkpoint(format!(
                "tensor '{}' does not tile the payload (offset {}, len {})",
                rec.name, rec.offset, rec.len
            )));
        }
        cursor += rec.len;
        let start = rec.offset as usize;
        let end = start + rec.len as usize;
        if end > payload.len() {
            return Err(LexError::Checkpoint(format!(
                "tensor '{}' extends past the payload",
                rec.name
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let tensor = Tensor::new(rec.shape.clone(), data)?.with_grad();
        if map.insert(rec.name.clone(), tensor).is_some() {
            return Err(LexError::Checkpoint(format!("duplicate tensor '{}'", rec.name)));
        }
    }
    if cursor != payload.len() as u64 {
        return Err(LexError::Checkpoint(format!(
            "payload has {} bytes but tensor records cover {cursor}",
            payload.len()
        )));
    }

    let params = ParamSet::from_tensors(&manifest.model, map)?;
    let vocab = Vocab::from_tokens(manifest.vocab)
        .map_err(|e| LexError::Checkpoint(format!("invalid vocab in checkpoint: {e}")))?;
    Ok(Checkpoint { params, vocab, step: manifest.step, val_loss: manifest.val_loss })
}
