//! Frame-sequence pooling: the time-insensitive and time-sensitive baselines
//! plus the learned descriptor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::model::{self, LiftParams, ModelError};
use crate::tensor::Tensor;

/// How a `T x D` frame matrix is reduced to a single vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind", content = "arg"))]
pub enum PoolingSpec {
    /// One frame, 1-based index.
    SingleFrame(usize),
    /// Concatenation of the selected frames, 1-based indices.
    KFrameConcat(Vec<usize>),
    /// Frame average, dim D.
    Mean,
    /// Mean concatenated with a centered-ramp weighted sum, dim 2D.
    TimeWeighted,
    /// All frames concatenated, dim T*D.
    FullConcat,
    /// `concat(z_s, z_d)` from a trained model, dim 2d.
    LiftDescriptor,
}

impl PoolingSpec {
    pub fn label(&self) -> String {
        match self {
            PoolingSpec::SingleFrame(i) => alloc::format!("single_frame({i})"),
            PoolingSpec::KFrameConcat(idx) => alloc::format!("k_frame_concat(k={})", idx.len()),
            PoolingSpec::Mean => "mean".into(),
            PoolingSpec::TimeWeighted => "time_weighted".into(),
            PoolingSpec::FullConcat => "full_concat".into(),
            PoolingSpec::LiftDescriptor => "lift_descriptor".into(),
        }
    }

    /// Linearly spaced 1-based indices for a k-frame pooling over T frames
    /// (k = 1 picks the middle frame).
    pub fn linspace_indices(k: usize, seq_len: usize) -> Vec<usize> {
        if k == 1 {
            return vec![libm::round((seq_len - 1) as f64 / 2.0) as usize + 1];
        }
        (0..k)
            .map(|i| {
                let pos = i as f64 * (seq_len - 1) as f64 / (k - 1) as f64;
                libm::round(pos) as usize + 1
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoolError {
    /// 1-based frame index outside the sequence.
    IndexOutOfRange { index: usize, seq_len: usize },
    /// `LiftDescriptor` requested without a model.
    ModelRequired,
    Model(ModelError),
}

impl fmt::Display for PoolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolError::IndexOutOfRange { index, seq_len } => {
                write!(f, "frame index {index} outside 1..={seq_len}")
            }
            PoolError::ModelRequired => write!(f, "lift_descriptor pooling requires a model"),
            PoolError::Model(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PoolError {}

impl From<ModelError> for PoolError {
    fn from(e: ModelError) -> Self {
        PoolError::Model(e)
    }
}

/// Reduce one video's frames to a single descriptor vector.
pub fn pool_descriptor(
    frames: &Tensor<f32>,
    spec: &PoolingSpec,
    model: Option<&LiftParams>,
) -> Result<Tensor<f32>, PoolError> {
    let t_len = frames.rows();
    let dim = frames.cols();
    let check = |index: usize| {
        if index < 1 || index > t_len {
            Err(PoolError::IndexOutOfRange { index, seq_len: t_len })
        } else {
            Ok(())
        }
    };
    match spec {
        PoolingSpec::SingleFrame(i) => {
            check(*i)?;
            Ok(Tensor::from_vec_unchecked(vec![dim], frames.row(i - 1).to_vec()))
        }
        PoolingSpec::KFrameConcat(indices) => {
            let mut data = Vec::with_capacity(indices.len() * dim);
            for &i in indices {
                check(i)?;
                data.extend_from_slice(frames.row(i - 1));
            }
            let n = data.len();
            Ok(Tensor::from_vec_unchecked(vec![n], data))
        }
        PoolingSpec::Mean => Ok(mean_frames(frames)),
        PoolingSpec::TimeWeighted => {
            let mean = mean_frames(frames);
            // Centered linear ramp, l1-normalized; annihilates constants.
            let center = (t_len as f32 + 1.0) / 2.0;
            let raw: Vec<f32> = (1..=t_len).map(|t| t as f32 - center).collect();
            let l1: f32 = raw.iter().map(|w| w.abs()).sum();
            let mut dynamic = vec![0.0f32; dim];
            if l1 > 0.0 {
                for (t, w) in raw.iter().enumerate() {
                    let w = w / l1;
                    for (j, &v) in frames.row(t).iter().enumerate() {
                        dynamic[j] += w * v;
                    }
                }
            }
            let mut data = mean.data().to_vec();
            data.extend_from_slice(&dynamic);
            Ok(Tensor::from_vec_unchecked(vec![2 * dim], data))
        }
        PoolingSpec::FullConcat => Ok(frames.flatten()),
        PoolingSpec::LiftDescriptor => {
            let params = model.ok_or(PoolError::ModelRequired)?;
            let desc = model::encode(params, frames)?;
            Ok(desc.concat())
        }
    }
}

fn mean_frames(frames: &Tensor<f32>) -> Tensor<f32> {
    let t_len = frames.rows();
    let dim = frames.cols();
    let mut out = vec![0.0f32; dim];
    for t in 0..t_len {
        for (j, &v) in frames.row(t).iter().enumerate() {
            out[j] += v;
        }
    }
    for v in &mut out {
        *v /= t_len as f32;
    }
    Tensor::from_vec_unchecked(vec![dim], out)
}

/// Concatenate two descriptors, order `(a, b)`.
pub fn concat_descriptors(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    let n = data.len();
    Tensor::from_vec_unchecked(vec![n], data)
}
