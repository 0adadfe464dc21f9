//! Text corpora and binary feature archives.
//!
//! Archive layout: `FTFEAT\0\0`, u32 version, u64 index length, JSON index,
//! then every utterance's frames as little-endian f64 in index order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Utterance, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const FEATURE_MAGIC: &[u8; 8] = b"FTFEAT\0\0";
pub const FEATURE_VERSION: u32 = 1;

/// Writes one space-separated sentence per line.
pub fn write_text(path: &Path, vocab: &Vocab, sentences: &[Vec<usize>]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&vocab.detokenize(s));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads and tokenizes a corpus, skipping blank lines.
pub fn read_text(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| vocab.tokenize(l))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct FeatureIndex {
    dim: usize,
    utterances: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    utt_id: String,
    frames: usize,
    tokens: Vec<usize>,
}

pub fn write_features(path: &Path, utts: &[Utterance]) -> Result<()> {
    let dim = utts.first().map_or(0, |u| u.features.cols());
    let mut entries = Vec::with_capacity(utts.len());
    let mut payload = Vec::new();
    for u in utts {
        if u.features.shape().len() != 2 || u.features.cols() != dim {
            return Err(Error::dim("write_features", format!("{} has shape {:?}", u.utt_id, u.features.shape())));
        }
        entries.push(IndexEntry {
            utt_id: u.utt_id.clone(),
            frames: u.features.rows(),
            tokens: u.tokens.clone(),
        });
        for v in u.features.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let index = serde_json::to_vec(&FeatureIndex { dim, utterances: entries })?;
    let mut bytes = Vec::with_capacity(20 + index.len() + payload.len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(index.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&index);
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<Utterance>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (version, header, body) = split_container(path, &bytes, FEATURE_MAGIC)?;
    if version != FEATURE_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let corrupt = |reason: String| Error::Corrupt {
        path: path.into(),
        reason,
    };
    let index: FeatureIndex = serde_json::from_slice(header).map_err(|e| corrupt(format!("bad index: {e}")))?;
    let total: usize = index.utterances.iter().map(|e| e.frames * index.dim).sum();
    if body.len() != total * 8 {
        return Err(corrupt(format!("expected {} payload bytes, found {}", total * 8, body.len())));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    index
        .utterances
        .into_iter()
        .map(|e| {
            let data: Vec<f64> = values.by_ref().take(e.frames * index.dim).collect();
            Ok(Utterance {
                features: Tensor::matrix(e.frames, index.dim, data).map_err(|err| corrupt(err.to_string()))?,
                utt_id: e.utt_id,
                tokens: e.tokens,
            })
        })
        .collect()
}

/// Splits `magic | u32 version | u64 header length | header | body`.
pub(crate) fn split_container<'a>(path: &Path, bytes: &'a [u8], magic: &[u8; 8]) -> Result<(u32, &'a [u8], &'a [u8])> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.into(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != magic {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header runs past end of file"))?;
    Ok((version, &bytes[20..end], &bytes[end..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utts() -> Vec<Utterance> {
        (0..3)
            .map(|i| Utterance {
                utt_id: format!("u{i}"),
                features: Tensor::matrix(i + 1, 2, (0..2 * (i + 1)).map(|k| k as f64 * 0.1 - 0.3).collect()).unwrap(),
                tokens: vec![4 + i, 5],
            })
            .collect()
    }

    #[test]
    fn feature_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_features(&p, &utts()).unwrap();
        assert_eq!(read_features(&p).unwrap(), utts());
    }

    #[test]
    fn truncated_archive_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_features(&p, &utts()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_features(&p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        let v = Vocab::synthetic(6);
        let s = vec![vec![4, 5, 9], vec![7]];
        write_text(&p, &v, &s).unwrap();
        assert_eq!(read_text(&p, &v).unwrap(), s);
    }
}
