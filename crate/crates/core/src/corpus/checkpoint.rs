//! Parameter checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 8            | magic `CRESTCKP`                                     |
//! | 4 (u32)      | format version, currently 1                          |
//! | 4 (u32)      | header length `h`                                    |
//! | h            | UTF-8 JSON header: `kind`, `vocab_hash`, `config`, `params` (`[{name, shape}]` in payload order) |
//! | rest         | each parameter's data as f32, row-major, in header order |
//!
//! The file must end exactly where the last parameter ends.

use crate::corpus::vocab::Vocab;
use crate::error::{CoreError, Result};
use crest_grad::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"CRESTCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub vocab_hash: String,
    pub config: serde_json::Value,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    vocab_hash: String,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        kind: ckpt.kind.clone(),
        vocab_hash: ckpt.vocab_hash.clone(),
        config: ckpt.config.clone(),
        params: ckpt
            .params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let head = serde_json::to_vec(&header).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + head.len() + 4 * ckpt.params.num_elements());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    for (_, t) in ckpt.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        CoreError::Checkpoint(format!("truncated file: {what} needs {len} bytes at offset {at}, file has {}", bytes.len()))
    })?;
    let out = &bytes[*at..end];
    *at = end;
    Ok(out)
}

fn u32_at(bytes: &[u8], at: &mut usize, what: &str) -> Result<u32> {
    let b = take(bytes, at, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses a whole container; nothing is returned unless every byte checks out.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut at = 0;
    if take(bytes, &mut at, 8, "magic")? != MAGIC {
        return Err(CoreError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32_at(bytes, &mut at, "version")?;
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported format version {version}, this build reads version {VERSION}"
        )));
    }
    let head_len = u32_at(bytes, &mut at, "header length")? as usize;
    let head = take(bytes, &mut at, head_len, "header")?;
    let header: Header =
        serde_json::from_slice(head).map_err(|e| CoreError::Checkpoint(format!("bad header: {e}")))?;
    let mut params = ParamStore::new();
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        let raw = take(bytes, &mut at, n * 4, &p.name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(&p.name, Tensor::new(p.shape.clone(), data)?);
    }
    if at != bytes.len() {
        return Err(CoreError::Checkpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - at
        )));
    }
    Ok(Checkpoint {
        kind: header.kind,
        vocab_hash: header.vocab_hash,
        config: header.config,
        params,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

/// Loads and checks the model kind and the vocabulary hash.
pub fn load_checkpoint(path: &Path, kind: &str, vocab: &Vocab) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| CoreError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let ckpt = decode_checkpoint(&bytes)?;
    if ckpt.kind != kind {
        return Err(CoreError::Checkpoint(format!(
            "{} holds a {} model, expected {kind}",
            path.display(),
            ckpt.kind
        )));
    }
    let want = vocab.hash();
    if ckpt.vocab_hash != want {
        return Err(CoreError::Checkpoint(format!(
            "vocabulary hash mismatch: checkpoint {} vs current {}",
            ckpt.vocab_hash, want
        )));
    }
    Ok(ckpt)
}
