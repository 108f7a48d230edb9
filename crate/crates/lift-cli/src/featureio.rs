//! Binary feature-sequence files and frame resampling.
//!
//! Layout: magic `LFT1` | u32 version (=1) | u32 frames | u32 dim |
//! `frames * dim` little-endian f32 values, row-major.

use std::fs;
use std::io;
use std::path::Path;

use lift_core::tensor::Tensor;

pub const FEATURE_MAGIC: [u8; 4] = *b"LFT1";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected \"LFT1\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} at offset 4 (expected {FEATURE_VERSION})")]
    BadVersion { found: u32 },
    #[error("truncated file at offset {offset}: expected {expected} bytes, found {found}")]
    Truncated { offset: usize, expected: usize, found: usize },
    #[error("zero-sized dimension in header: frames={frames}, dim={dim}")]
    EmptyShape { frames: u32, dim: u32 },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("trailing bytes after payload: file is {found} bytes, expected {expected}")]
    TrailingBytes { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Serialize a `T x D` frame matrix to the feature-file byte layout.
pub fn encode_feature_bytes(frames: &Tensor<f32>) -> Result<Vec<u8>, FormatError> {
    let (t_raw, dim) = (frames.rows(), frames.cols());
    if t_raw == 0 || dim == 0 {
        return Err(FormatError::EmptyShape { frames: t_raw as u32, dim: dim as u32 });
    }
    for (index, v) in frames.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(FormatError::NonFinite { index });
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t_raw * dim);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(t_raw as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parse feature-file bytes back into a `T x D` matrix.
pub fn decode_feature_bytes(bytes: &[u8]) -> Result<Tensor<f32>, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != FEATURE_MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(FormatError::BadVersion { found: version });
    }
    let t_raw = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if t_raw == 0 || dim == 0 {
        return Err(FormatError::EmptyShape { frames: t_raw, dim });
    }
    let numel = t_raw as usize * dim as usize;
    let expected = HEADER_LEN + 4 * numel;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes { expected, found: bytes.len() });
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(vec![t_raw as usize, dim as usize], data).map_err(|e| match e {
        lift_core::tensor::TensorError::NonFinite { index } => FormatError::NonFinite { index },
        other => panic!("unexpected tensor error: {other}"),
    })
}

pub fn write_feature_file(frames: &Tensor<f32>, path: &Path) -> Result<(), FormatError> {
    let bytes = encode_feature_bytes(frames)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Tensor<f32>, FormatError> {
    let bytes = fs::read(path)?;
    decode_feature_bytes(&bytes)
}

/// Read only the `(frames, dim)` header of a feature file.
pub fn read_feature_header(path: &Path) -> Result<(usize, usize), FormatError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != FEATURE_MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(FormatError::BadVersion { found: version });
    }
    Ok((
        u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
        u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize,
    ))
}

/// Endpoint-inclusive linear selection of `target` row indices out of
/// `t_raw`. `target == 1` picks the middle frame. Indices repeat when
/// `target > t_raw`.
pub fn resample_indices(t_raw: usize, target: usize) -> Vec<usize> {
    assert!(t_raw >= 1 && target >= 1);
    if target == 1 {
        return vec![((t_raw - 1) as f64 / 2.0).round() as usize];
    }
    (0..target)
        .map(|i| (i as f64 * (t_raw - 1) as f64 / (target - 1) as f64).round() as usize)
        .collect()
}

/// Linearly sample `target` frames from a `T_raw x D` matrix.
pub fn resample_frames(frames: &Tensor<f32>, target: usize) -> Tensor<f32> {
    let dim = frames.cols();
    let indices = resample_indices(frames.rows(), target);
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in &indices {
        data.extend_from_slice(frames.row(i));
    }
    Tensor::from_vec(vec![target, dim], data).unwrap()
}
