//! Time-variance metric and 2-D trajectory projection.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum StatsError {
    /// Time variance needs at least two frames.
    TooFewFrames { frames: usize },
    Tensor(TensorError),
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::TooFewFrames { frames } => {
                write!(f, "time variance needs >= 2 frames, got {frames}")
            }
            StatsError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for StatsError {}

/// Per-dimension population variance across time, averaged over dimensions.
pub fn time_variance(frames: &Tensor<f32>) -> Result<f64, StatsError> {
    let t_len = frames.rows();
    if t_len < 2 {
        return Err(StatsError::TooFewFrames { frames: t_len });
    }
    let dim = frames.cols();
    let mut mean = vec![0.0f64; dim];
    for t in 0..t_len {
        for (j, &v) in frames.row(t).iter().enumerate() {
            mean[j] += v as f64;
        }
    }
    for m in &mut mean {
        *m /= t_len as f64;
    }
    let mut total = 0.0f64;
    for t in 0..t_len {
        for (j, &v) in frames.row(t).iter().enumerate() {
            let d = v as f64 - mean[j];
            total += d * d;
        }
    }
    Ok(total / (t_len as f64 * dim as f64))
}

/// Which trajectory a projected point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Original,
    Reconstructed,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Original => "original",
            PointKind::Reconstructed => "reconstructed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    /// 1-based frame index.
    pub t: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub kind: PointKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// True when the union of points spans fewer than 2 directions; pc2 is
    /// zero-filled in that case.
    pub rank_deficient: bool,
}

/// PCA fit on the union of both trajectories, both projected onto the top-2
/// component plane.
pub fn project_2d(
    original: &Tensor<f32>,
    reconstructed: &Tensor<f32>,
) -> Result<Projection, StatsError> {
    if original.rows() < 2 {
        return Err(StatsError::TooFewFrames { frames: original.rows() });
    }
    if original.shape() != reconstructed.shape() {
        return Err(StatsError::Tensor(TensorError::DimMismatch {
            context: "project_2d",
            left: original.shape().to_vec(),
            right: reconstructed.shape().to_vec(),
        }));
    }
    let t_len = original.rows();
    let dim = original.cols();
    let n = 2 * t_len;

    // Centered point cloud in f64.
    let mut points = Vec::with_capacity(n);
    for t in 0..t_len {
        points.push(original.row(t).iter().map(|&v| v as f64).collect::<Vec<f64>>());
    }
    for t in 0..t_len {
        points.push(reconstructed.row(t).iter().map(|&v| v as f64).collect::<Vec<f64>>());
    }
    let mut mean = vec![0.0f64; dim];
    for p in &points {
        for (j, &v) in p.iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for p in &mut points {
        for (j, v) in p.iter_mut().enumerate() {
            *v -= mean[j];
        }
    }

    // Covariance and its top-2 eigenvectors by power iteration + deflation.
    let mut cov = vec![0.0f64; dim * dim];
    for p in &points {
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += p[i] * p[j];
            }
        }
    }
    for c in &mut cov {
        *c /= n as f64;
    }
    let total_var: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();

    let (v1, l1) = power_iteration(&cov, dim, None);
    let (v2, l2) = power_iteration(&cov, dim, Some((&v1, l1)));
    let rank_deficient = l2 <= total_var.max(1.0) * 1e-12;
    let v2 = if rank_deficient { vec![0.0; dim] } else { v2 };

    let project = |p: &[f64], axis: &[f64]| -> f64 {
        p.iter().zip(axis.iter()).map(|(a, b)| a * b).sum()
    };
    let mut out = Vec::with_capacity(n);
    for (idx, p) in points.iter().enumerate() {
        let (t, kind) = if idx < t_len {
            (idx + 1, PointKind::Original)
        } else {
            (idx - t_len + 1, PointKind::Reconstructed)
        };
        out.push(ProjectedPoint {
            t,
            pc1: project(p, &v1),
            pc2: project(p, &v2),
            kind,
        });
    }
    Ok(Projection { points: out, rank_deficient })
}

/// Dominant eigenpair of a symmetric matrix; with `deflate` set, of the
/// matrix minus the given rank-1 eigencomponent. Deterministic start vector.
fn power_iteration(cov: &[f64], dim: usize, deflate: Option<(&[f64], f64)>) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.001 * i as f64).collect();
    normalize(&mut v);
    if let Some((d, _)) = deflate {
        orthogonalize(&mut v, d);
    }
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let mut next = vec![0.0f64; dim];
        for i in 0..dim {
            let row = &cov[i * dim..(i + 1) * dim];
            next[i] = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        }
        if let Some((d, l)) = deflate {
            let coeff: f64 = d.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() * l;
            for (n, dv) in next.iter_mut().zip(d.iter()) {
                *n -= coeff * dv;
            }
        }
        let new_lambda = norm(&next);
        if new_lambda == 0.0 {
            return (v, 0.0);
        }
        for n in &mut next {
            *n /= new_lambda;
        }
        if let Some((d, _)) = deflate {
            orthogonalize(&mut next, d);
            let n = norm(&next);
            if n == 0.0 {
                return (next, 0.0);
            }
            for x in &mut next {
                *x /= n;
            }
        }
        let delta: f64 = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        lambda = new_lambda;
        if delta < 1e-14 {
            break;
        }
    }
    // Sign convention: largest-magnitude component positive.
    let max_idx = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    if v[max_idx] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    (v, lambda)
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let dot: f64 = v.iter().zip(against.iter()).map(|(a, b)| a * b).sum();
    for (x, a) in v.iter_mut().zip(against.iter()) {
        *x -= dot * a;
    }
}
