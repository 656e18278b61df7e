//! Checkpoint file layout:
//!
//! ```text
//! magic  b"STMACKPT"
//! u64 LE header length
//! header (JSON): format_version, config, vocab, params [{name, shape}],
//!                channel_mean, meta
//! payload: every parameter's f32 values, little-endian, in header order
//! SHA-256 of everything above (32 bytes)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::caption::Vocabulary;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"STMACKPT";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// 1-based epoch the parameters come from; 0 for untrained.
    pub epoch: usize,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub channel_mean: [f32; 3],
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    params: Vec<ParamEntry>,
    channel_mean: [f32; 3],
    meta: TrainingMeta,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: ckpt.config.clone(),
        vocab: ckpt.vocab.clone(),
        params: ckpt
            .params
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        channel_mean: ckpt.channel_mean,
        meta: ckpt.meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out =
        Vec::with_capacity(16 + header.len() + 4 * ckpt.params.num_elements() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, _, t) in ckpt.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::Integrity(format!("checkpoint {m}"));
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt("has no valid preamble"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_end = bytes.len() - DIGEST_LEN;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body_end)
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header_bytes = &bytes[16..header_end];

    // The version is checked first so newer files fail with a clear error
    // even if their layout differs.
    if let Ok(v) = serde_json::from_slice::<Value>(header_bytes) {
        if let Some(found) = v.get("format_version").and_then(Value::as_u64) {
            if found != u64::from(FORMAT_VERSION) {
                return Err(Error::Version {
                    found: u32::try_from(found).unwrap_or(u32::MAX),
                    supported: FORMAT_VERSION,
                });
            }
        }
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(corrupt("checksum mismatch"));
    }
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Integrity(format!("checkpoint header: {e}")))?;

    let payload = &bytes[header_end..body_end];
    let declared: usize = header
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if payload.len() != declared * 4 {
        return Err(Error::Integrity(format!(
            "checkpoint payload has {} bytes, shapes declare {}",
            payload.len(),
            declared * 4
        )));
    }
    let mut params = ParamStore::new();
    let mut chunks = payload.chunks_exact(4);
    for p in header.params {
        let n: usize = p.shape.iter().product();
        let data: Vec<f32> = chunks
            .by_ref()
            .take(n)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(p.shape, data).map_err(|e| Error::Integrity(e.to_string()))?;
        params
            .insert(p.name, t)
            .map_err(|e| Error::Integrity(e.to_string()))?;
    }
    if header.config.vocab_size != header.vocab.len() {
        return Err(Error::Integrity(format!(
            "config expects {} tokens, stored vocabulary has {}",
            header.config.vocab_size,
            header.vocab.len()
        )));
    }
    Ok(Checkpoint {
        config: header.config,
        vocab: header.vocab,
        params,
        channel_mean: header.channel_mean,
        meta: header.meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
