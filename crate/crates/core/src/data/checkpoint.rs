//! Versioned model checkpoints.
//!
//! Layout: `FTCKPT\0\0`, u32 version, u64 manifest length, JSON manifest,
//! then raw little-endian f64 tensor blobs at the offsets the manifest lists.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::split_container;
use super::Vocab;
use crate::error::{Error, Result};
use crate::model::{kind_error, AnyModel, FactorizedTransducer, LanguageModel, ModelKind, StandardTransducer};
use crate::numerics::Tensor;

const CHECKPOINT_MAGIC: &[u8; 8] = b"FTCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    /// Number of f64 values.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub vocab: Vocab,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

pub fn save_checkpoint(model: &AnyModel, path: &Path) -> Result<()> {
    let config = match model {
        AnyModel::Standard(m) => serde_json::to_value(crate::model::TransducerModel::config(m))?,
        AnyModel::Factorized(m) => serde_json::to_value(crate::model::TransducerModel::config(m))?,
        AnyModel::Lm(m) => serde_json::to_value(m.config())?,
    };
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (_, p) in model.params().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len(),
            len: p.value.numel(),
        });
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        kind: model.kind(),
        config,
        vocab: model.vocab().clone(),
        tensors,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec_pretty(&manifest)?;
    let mut bytes = Vec::with_capacity(20 + header.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (version, header, payload) = split_container(path, &bytes, CHECKPOINT_MAGIC)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let corrupt = |reason: String| Error::Corrupt {
        path: path.into(),
        reason,
    };
    let manifest: CheckpointManifest =
        serde_json::from_slice(header).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(corrupt("manifest version disagrees with container".into()));
    }
    if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(corrupt("payload checksum mismatch".into()));
    }
    let mut values = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let end = t
            .len
            .checked_mul(8)
            .and_then(|n| n.checked_add(t.offset))
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| corrupt(format!("tensor {} out of bounds", t.name)))?;
        let data = payload[t.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = Tensor::new(t.shape.clone(), data).map_err(|e| corrupt(format!("tensor {}: {e}", t.name)))?;
        values.push((t.name.clone(), tensor));
    }
    let cfg = manifest.config;
    let vocab = manifest.vocab;
    let bad_cfg = |e: serde_json::Error| corrupt(format!("bad config: {e}"));
    Ok(match manifest.kind {
        ModelKind::Standard => AnyModel::Standard(StandardTransducer::from_parts(
            serde_json::from_value(cfg).map_err(bad_cfg)?,
            vocab,
            &values,
        )?),
        ModelKind::Factorized => AnyModel::Factorized(FactorizedTransducer::from_parts(
            serde_json::from_value(cfg).map_err(bad_cfg)?,
            vocab,
            &values,
        )?),
        ModelKind::Lm => AnyModel::Lm(LanguageModel::from_parts(
            serde_json::from_value(cfg).map_err(bad_cfg)?,
            vocab,
            &values,
        )?),
    })
}

/// Replaces the vocabulary predictor of `model` with the LM stored at `lm_checkpoint`.
/// A factorized checkpoint contributes its own vocabulary predictor.
pub fn swap_vocab_predictor(mut model: FactorizedTransducer, lm_checkpoint: &Path) -> Result<FactorizedTransducer> {
    let lm = match load_checkpoint(lm_checkpoint)? {
        AnyModel::Lm(lm) => lm,
        AnyModel::Factorized(f) => f.vocab_predictor()?,
        other => return Err(kind_error(ModelKind::Lm, other.kind())),
    };
    model.swap_vocab_predictor(&lm)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = StandardTransducer::new(ModelConfig::desk(4, 1), Vocab::synthetic(4)).unwrap();
        save_checkpoint(&AnyModel::Standard(m), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn flipped_payload_byte_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = StandardTransducer::new(ModelConfig::desk(4, 1), Vocab::synthetic(4)).unwrap();
        save_checkpoint(&AnyModel::Standard(m), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Corrupt { .. })));
    }
}
