//! Checkpoint file: a small JSON header (architecture, dims, seed,
//! vocabulary hash, training record) followed by the raw little-endian
//! f64 parameter blobs. Round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{LabError, Result};
use crate::models::train::TrainSummary;
use crate::models::{EncoderPair, ModelConfig};

const MAGIC: &[u8; 8] = b"DUALENC\0";
pub const FORMAT_VERSION: u32 = 1;

/// Golden embedding recorded at save time; lets a loader verify the
/// checkpoint still encodes a known input the same way.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegressionProbe {
    pub pair_id: u32,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub training: Option<TrainSummary>,
    pub regression: Option<RegressionProbe>,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_sha256: String,
    image_param_count: usize,
    text_param_count: usize,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

pub fn save_checkpoint(pair: &EncoderPair, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let header = Header {
        config: pair.config().clone(),
        vocab_sha256: pair.vocab_fingerprint().to_string(),
        image_param_count: pair.image_params().len(),
        text_param_count: pair.text_params().len(),
        meta: meta.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| LabError::Format(format!("checkpoint header encode failed: {e}")))?;

    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    let mut buf = Vec::with_capacity(8 * (header.image_param_count + header.text_param_count));
    for &v in pair.image_params().values().iter().chain(pair.text_params().values()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

/// Load a checkpoint. When `expected_vocab` is given (the fingerprint of
/// the dataset in use), a mismatch is rejected naming both hashes.
pub fn load_checkpoint(path: &Path, expected_vocab: Option<&str>) -> Result<(EncoderPair, CheckpointMeta)> {
    let mut file = std::fs::File::open(path).map_err(|_| LabError::MissingArtifact {
        path: path.to_path_buf(),
        hint: "train a model first (train)".into(),
    })?;

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LabError::Format(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(LabError::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    file.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| LabError::Format(format!("{}: bad header: {e}", path.display())))?;

    if let Some(expected) = expected_vocab {
        if expected != header.vocab_sha256 {
            return Err(LabError::VocabMismatch {
                checkpoint: header.vocab_sha256.clone(),
                dataset: expected.to_string(),
            });
        }
    }

    let total = header.image_param_count + header.text_param_count;
    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;
    if blob.len() != total * 8 {
        return Err(LabError::Format(format!(
            "{}: parameter blob holds {} bytes, header promises {}",
            path.display(),
            blob.len(),
            total * 8
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (img, txt) = values.split_at(header.image_param_count);
    let pair = EncoderPair::from_parts(
        header.config.clone(),
        img.to_vec(),
        txt.to_vec(),
        header.vocab_sha256.clone(),
    )?;
    Ok((pair, header.meta))
}
