//! Model checkpoints: magic `LCK1` | u32 header length | JSON header
//! (config, metadata, tensor directory with byte offsets) | raw
//! little-endian f32 payloads in directory order.

use std::fs;
use std::io;
use std::path::Path;

use lift_core::model::{LiftConfig, LiftParams};
use lift_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LiftParams,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub final_loss: f32,
    pub seed: u64,
    /// Per-dim (mean, std) when the model was trained on standardized
    /// features; encode applies the same transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_stats: Option<(Vec<f32>, Vec<f32>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: usize,
    /// Payload length in bytes.
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: LiftConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic at offset 0: expected \"LCK1\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("truncated checkpoint at offset {offset}: need {need} more bytes")]
    Truncated { offset: usize, need: usize },
    #[error("malformed header: {0}")]
    BadHeader(serde_json::Error),
    #[error("tensor '{name}': directory entry length {len} does not match shape {shape:?}")]
    BadEntry { name: String, shape: Vec<usize>, len: usize },
    #[error("parameter set inconsistent with config: {0}")]
    BadParams(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (name, tensor) in ckpt.params.tensors() {
        let offset = payload.len();
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            len: payload.len() - offset,
        });
    }
    let header = Header {
        config: ckpt.params.config.clone(),
        meta: ckpt.meta.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(8 + header_json.len() + payload.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated { offset: bytes.len(), need: 8 - bytes.len() });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(CheckpointError::Truncated {
            offset: bytes.len(),
            need: 8 + header_len - bytes.len(),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[8..8 + header_len]).map_err(CheckpointError::BadHeader)?;
    let payload = &bytes[8 + header_len..];
    let mut named = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        if entry.len != 4 * numel {
            return Err(CheckpointError::BadEntry {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                len: entry.len,
            });
        }
        let end = entry.offset + entry.len;
        if end > payload.len() {
            return Err(CheckpointError::Truncated {
                offset: 8 + header_len + payload.len(),
                need: end - payload.len(),
            });
        }
        let data: Vec<f32> = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        named.push((
            entry.name.clone(),
            Tensor::from_vec(entry.shape.clone(), data)
                .map_err(|e| CheckpointError::BadParams(e.to_string()))?,
        ));
    }
    let params = LiftParams::from_named(&header.config, named)
        .map_err(|e| CheckpointError::BadParams(e.to_string()))?;
    Ok(Checkpoint { params, meta: header.meta })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lift_core::model;

    fn toy_checkpoint(seed: u64) -> Checkpoint {
        let cfg = LiftConfig {
            input_dim: 6,
            latent_dim: 4,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            seq_len: 3,
            lambda_orth: 0.1,
        };
        Checkpoint {
            params: LiftParams::init(&cfg, seed).unwrap(),
            meta: CheckpointMeta {
                epoch: 12,
                final_loss: 0.5,
                seed,
                feature_stats: None,
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ckpt = toy_checkpoint(3);
        let bytes = encode_checkpoint(&ckpt);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn loaded_model_reproduces_forward_outputs() {
        let ckpt = toy_checkpoint(9);
        let back = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        let frames = Tensor::from_vec(
            vec![3, 6],
            (0..18).map(|i| (i as f32) * 0.1 - 0.9).collect(),
        )
        .unwrap();
        let a = model::encode(&ckpt.params, &frames).unwrap();
        let b = model::encode(&back.params, &frames).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_checkpoint(&toy_checkpoint(0));
        bytes[..4].copy_from_slice(b"NOPE");
        assert!(matches!(
            decode_checkpoint(&bytes).unwrap_err(),
            CheckpointError::BadMagic { .. }
        ));
    }

    #[test]
    fn missing_tensor_named_in_error() {
        let ckpt = toy_checkpoint(1);
        let mut bytes = encode_checkpoint(&ckpt);
        // Corrupt the name of the decoder output weight inside the JSON header.
        let needle = b"decoder.out.w";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[pos..pos + 3].copy_from_slice(b"dec");
        bytes[pos + 3] = b'X';
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("decoder.out.w"), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode_checkpoint(&toy_checkpoint(2));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 4]).unwrap_err(),
            CheckpointError::Truncated { .. }
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lck");
        let ckpt = toy_checkpoint(4);
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }
}
