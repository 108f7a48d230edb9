//! Dense row-major tensors.
//!
//! Only what the model needs: vectors and matrices, plain arithmetic, and a
//! checked construction mode that rejects non-finite values.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// `product(shape)` does not equal the data length.
    ShapeDataMismatch { shape: Vec<usize>, data_len: usize },
    /// A stored value is NaN or infinite.
    NonFinite { index: usize },
    /// Two operands have incompatible shapes.
    DimMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A zero extent where a positive one is required.
    EmptyDim { context: &'static str },
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeDataMismatch { shape, data_len } => {
                write!(f, "shape {shape:?} implies a different length than data ({data_len})")
            }
            TensorError::NonFinite { index } => {
                write!(f, "non-finite value at flat index {index}")
            }
            TensorError::DimMismatch { context, left, right } => {
                write!(f, "{context}: incompatible shapes {left:?} and {right:?}")
            }
            TensorError::EmptyDim { context } => write!(f, "{context}: empty dimension"),
            TensorError::IndexOutOfRange { context, index, len } => {
                write!(f, "{context}: index {index} out of range for length {len}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TensorError {}

/// Dense row-major tensor. Values are immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Checked construction: shape/data agreement and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeDataMismatch { shape, data_len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// Unchecked on finiteness; shape/data agreement still enforced.
    pub(crate) fn from_vec_unchecked(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); numel] }
    }

    pub fn vector(data: Vec<S>) -> Result<Self, TensorError> {
        let n = data.len();
        Self::from_vec(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, TensorError> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows when viewed as a matrix (a vector is one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Last-axis extent.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn scalar_value(&self) -> S {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.into_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::DimMismatch {
                context: "elementwise op",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        self.map(|v| v * c)
    }

    /// Matrix product. Operands are viewed as `rows x cols` matrices.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(TensorError::DimMismatch {
                context: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Tensor<S> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Tensor<S>]) -> Result<Tensor<S>, TensorError> {
        let cols = match parts.first() {
            Some(p) => p.cols(),
            None => return Err(TensorError::EmptyDim { context: "concat_rows" }),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(TensorError::DimMismatch {
                    context: "concat_rows",
                    left: vec![cols],
                    right: vec![p.cols()],
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: vec![rows, cols], data })
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor<S>, TensorError> {
        let c = self.cols();
        if start + len > self.rows() {
            return Err(TensorError::IndexOutOfRange {
                context: "slice_rows",
                index: start + len,
                len: self.rows(),
            });
        }
        Ok(Tensor {
            shape: vec![len, c],
            data: self.data[start * c..(start + len) * c].to_vec(),
        })
    }

    pub fn dot(&self, other: &Tensor<S>) -> S {
        debug_assert_eq!(self.numel(), other.numel());
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn norm(&self) -> S {
        self.dot(self).sqrt()
    }

    /// Flatten to a vector shape, keeping the data.
    pub fn flatten(&self) -> Tensor<S> {
        Tensor { shape: vec![self.numel()], data: self.data.clone() }
    }

    pub fn describe(&self) -> String {
        format!("Tensor{:?}", self.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_shape_mismatch() {
        let err = Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { .. }));
    }

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::from_vec(vec![3], vec![1.0, f32::NAN, 2.0]).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { index: 1 });
    }

    #[test]
    fn matmul_identity() {
        let id = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(id.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_dot_product() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![4, 2]);
        assert!(matches!(
            a.matmul(&b),
            Err(TensorError::DimMismatch { context: "matmul", .. })
        ));
    }

    #[test]
    fn transpose_round_trip() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get2(2, 1), 6.0);
    }
}
