//! Reverse-mode differentiation over tensors.
//!
//! Operations are recorded eagerly on a [`Tape`]; `backward` walks the
//! recording once in reverse topological order. The primitive set is exactly
//! what the encoder/decoder, losses and probes need; there is no control-flow
//! capture and no higher-order support.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S: Scalar> {
    Leaf,
    /// Constant: participates in the forward pass, receives no gradient.
    Constant,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Matrix plus a vector broadcast over rows.
    AddRowBroadcast(Var, Var),
    Scale(Var, S),
    /// Elementwise product with a fixed tensor (dropout masks).
    MulConst(Var, Tensor<S>),
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: S,
    },
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
        len: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    /// Sum of squared entries, a scalar.
    SumSquares(Var),
    /// Cosine similarity of two flattened tensors; 0 when either norm is 0.
    CosineSim(Var, Var),
    /// Mean binary cross-entropy with logits against fixed targets.
    BceWithLogits(Var, Tensor<S>),
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Gradients produced by [`Tape::backward`]. Unused inputs map to zero.
pub struct Grads<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    /// Gradient w.r.t. `v`; zero tensor shape is the node's shape.
    pub fn get(&self, v: Var, tape: &Tape<S>) -> Tensor<S> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape().to_vec()),
        }
    }
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_scalar<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (S::one() + inner.tanh())
}

fn gelu_grad_scalar<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4);
    let k = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + three * k * x * x)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A non-differentiable input (targets, position encodings, fixtures).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// `x + bias` where `bias` has the length of `x`'s last axis.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let xt = self.value(x);
        let bt = self.value(bias);
        if bt.numel() != xt.cols() {
            return Err(TensorError::DimMismatch {
                context: "add_row_broadcast",
                left: xt.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let cols = xt.cols();
        let data = xt
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bt.data()[i % cols])
            .collect();
        let v = Tensor::from_vec_unchecked(xt.shape().to_vec(), data);
        Ok(self.push(v, Op::AddRowBroadcast(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn mul_const(&mut self, x: Var, mask: Tensor<S>) -> Result<Var, TensorError> {
        let v = self.value(x).zip_map(&mask, |a, b| a * b)?;
        Ok(self.push(v, Op::MulConst(x, mask)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu_scalar);
        self.push(v, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > S::zero() { a } else { S::zero() });
        self.push(v, Op::Relu(x))
    }

    /// Per-row normalization over the last axis (variance uses `1/d`), then
    /// an affine map with `gain`/`bias` of length `d`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var, TensorError> {
        let xt = self.value(x);
        let d = xt.cols();
        if d == 0 {
            return Err(TensorError::EmptyDim { context: "layer_norm" });
        }
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(TensorError::DimMismatch {
                context: "layer_norm",
                left: xt.shape().to_vec(),
                right: self.value(gain).shape().to_vec(),
            });
        }
        let v = layer_norm_forward(xt, self.value(gain), self.value(bias), eps);
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let cols = xt.cols();
        let mut data = Vec::with_capacity(xt.numel());
        for r in 0..xt.rows() {
            let row = xt.row(r);
            let max = row.iter().fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
            let exps: Vec<S> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum = exps.iter().fold(S::zero(), |a, &b| a + b);
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let v = Tensor::from_vec_unchecked(vec![xt.rows(), cols], data);
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&tensors)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(TensorError::DimMismatch {
                    context: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::from_vec_unchecked(vec![rows, cols], data);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let v = self.value(x).slice_rows(start, len)?;
        Ok(self.push(v, Op::SliceRows { x, start, len }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xt = self.value(x);
        let cols = xt.cols();
        if start + len > cols {
            return Err(TensorError::IndexOutOfRange {
                context: "slice_cols",
                index: start + len,
                len: cols,
            });
        }
        let rows = xt.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xt.row(r)[start..start + len]);
        }
        let v = Tensor::from_vec_unchecked(vec![rows, len], data);
        Ok(self.push(v, Op::SliceCols { x, start, len }))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(S::zero(), |acc, &v| acc + v * v);
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let at = self.value(a);
        let bt = self.value(b);
        if at.numel() != bt.numel() {
            return Err(TensorError::DimMismatch {
                context: "cosine_sim",
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let na = at.norm();
        let nb = bt.norm();
        let v = if na == S::zero() || nb == S::zero() {
            S::zero()
        } else {
            at.dot(bt) / (na * nb)
        };
        Ok(self.push(Tensor::scalar(v), Op::CosineSim(a, b)))
    }

    /// Mean over samples of the numerically stable softplus form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<S>) -> Result<Var, TensorError> {
        let lt = self.value(logits);
        if lt.numel() != targets.numel() {
            return Err(TensorError::DimMismatch {
                context: "bce_with_logits",
                left: lt.shape().to_vec(),
                right: targets.shape().to_vec(),
            });
        }
        let n = S::from_usize(lt.numel());
        let mut total = S::zero();
        for (&z, &y) in lt.data().iter().zip(targets.data().iter()) {
            let max = if z > S::zero() { z } else { S::zero() };
            total = total + max - z * y + ((-z.abs()).exp() + S::one()).ln();
        }
        Ok(self.push(Tensor::scalar(total / n), Op::BceWithLogits(logits, targets)))
    }

    /// Backpropagate from a scalar root. Each node is visited exactly once.
    pub fn backward(&self, root: Var) -> Grads<S> {
        assert_eq!(self.value(root).numel(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(S::one()));

        for id in (0..=root.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, id: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let accum = |grads: &mut [Option<Tensor<S>>], v: Var, delta: Tensor<S>| {
            grads[v.0] = Some(match grads[v.0].take() {
                Some(existing) => existing.add(&delta).expect("gradient shape invariant"),
                None => delta,
            });
        };

        match &self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul(a, b) => {
                let at = self.value(*a);
                let bt = self.value(*b);
                let da = g.matmul(&bt.transpose()).expect("matmul grad");
                let db = at.transpose().matmul(g).expect("matmul grad");
                accum(grads, *a, reshape_like(da, at));
                accum(grads, *b, reshape_like(db, bt));
            }
            Op::Add(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.scale(-S::one()));
            }
            Op::AddRowBroadcast(x, bias) => {
                accum(grads, *x, g.clone());
                let cols = self.value(*x).cols();
                let mut db = vec![S::zero(); cols];
                for (i, &v) in g.data().iter().enumerate() {
                    db[i % cols] = db[i % cols] + v;
                }
                let bt = self.value(*bias);
                accum(
                    grads,
                    *bias,
                    Tensor::from_vec_unchecked(bt.shape().to_vec(), db),
                );
            }
            Op::Scale(x, c) => accum(grads, *x, g.scale(*c)),
            Op::MulConst(x, mask) => {
                let dx = g.zip_map(mask, |a, b| a * b).expect("mask grad");
                accum(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let xt = self.value(*x);
                let dx = Tensor::from_vec_unchecked(
                    xt.shape().to_vec(),
                    xt.data()
                        .iter()
                        .zip(g.data().iter())
                        .map(|(&v, &gv)| gv * gelu_grad_scalar(v))
                        .collect(),
                );
                accum(grads, *x, dx);
            }
            Op::Relu(x) => {
                let xt = self.value(*x);
                let dx = Tensor::from_vec_unchecked(
                    xt.shape().to_vec(),
                    xt.data()
                        .iter()
                        .zip(g.data().iter())
                        .map(|(&v, &gv)| if v > S::zero() { gv } else { S::zero() })
                        .collect(),
                );
                accum(grads, *x, dx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (dx, dgain, dbias) =
                    layer_norm_backward(self.value(*x), self.value(*gain), g, *eps);
                accum(grads, *x, dx);
                let gt = self.value(*gain);
                let bt = self.value(*bias);
                accum(grads, *gain, reshape_like(dgain, gt));
                accum(grads, *bias, reshape_like(dbias, bt));
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[id].value;
                let cols = y.cols();
                let mut dx = Vec::with_capacity(y.numel());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot = yr
                        .iter()
                        .zip(gr.iter())
                        .fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    dx.extend(yr.iter().zip(gr.iter()).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                accum(
                    grads,
                    *x,
                    Tensor::from_vec_unchecked(self.value(*x).shape().to_vec(), dx),
                );
            }
            Op::Transpose(x) => {
                let dx = g.transpose();
                let xt = self.value(*x);
                accum(grads, *x, reshape_like(dx, xt));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let dp = g.slice_rows(start, rows).expect("concat grad");
                    let pt = self.value(p);
                    accum(grads, p, reshape_like(dp, pt));
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut start = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut data = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[start..start + pc]);
                    }
                    let pt = self.value(p);
                    accum(
                        grads,
                        p,
                        reshape_like(Tensor::from_vec_unchecked(vec![rows, pc], data), pt),
                    );
                    start += pc;
                }
            }
            Op::SliceRows { x, start, len } => {
                let xt = self.value(*x);
                let cols = xt.cols();
                let mut dx = vec![S::zero(); xt.numel()];
                let base = start * cols;
                for i in 0..len * cols {
                    dx[base + i] = g.data()[i];
                }
                accum(grads, *x, Tensor::from_vec_unchecked(xt.shape().to_vec(), dx));
            }
            Op::SliceCols { x, start, len } => {
                let xt = self.value(*x);
                let cols = xt.cols();
                let mut dx = vec![S::zero(); xt.numel()];
                for r in 0..xt.rows() {
                    for j in 0..*len {
                        dx[r * cols + start + j] = g.data()[r * len + j];
                    }
                }
                accum(grads, *x, Tensor::from_vec_unchecked(xt.shape().to_vec(), dx));
            }
            Op::SumSquares(x) => {
                let gv = g.scalar_value();
                let two = S::from_f64(2.0);
                let dx = self.value(*x).scale(two * gv);
                accum(grads, *x, dx);
            }
            Op::CosineSim(a, b) => {
                let at = self.value(*a);
                let bt = self.value(*b);
                let na = at.norm();
                let nb = bt.norm();
                if na == S::zero() || nb == S::zero() {
                    return;
                }
                let gv = g.scalar_value();
                let c = at.dot(bt) / (na * nb);
                let da = bt
                    .scale(S::one() / (na * nb))
                    .sub(&at.scale(c / (na * na)))
                    .expect("cosine grad")
                    .scale(gv);
                let db = at
                    .scale(S::one() / (na * nb))
                    .sub(&bt.scale(c / (nb * nb)))
                    .expect("cosine grad")
                    .scale(gv);
                accum(grads, *a, reshape_like(da, at));
                accum(grads, *b, reshape_like(db, bt));
            }
            Op::BceWithLogits(logits, targets) => {
                let lt = self.value(*logits);
                let n = S::from_usize(lt.numel());
                let gv = g.scalar_value();
                let dx = Tensor::from_vec_unchecked(
                    lt.shape().to_vec(),
                    lt.data()
                        .iter()
                        .zip(targets.data().iter())
                        .map(|(&z, &y)| {
                            let sig = S::one() / (S::one() + (-z).exp());
                            gv * (sig - y) / n
                        })
                        .collect(),
                );
                accum(grads, *logits, dx);
            }
        }
    }
}

/// Matmul and friends canonicalize operands to 2-D; restore the node's
/// original shape so gradient shapes match parameter shapes.
fn reshape_like<S: Scalar>(t: Tensor<S>, like: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(t.numel(), like.numel());
    Tensor::from_vec_unchecked(like.shape().to_vec(), t.data().to_vec())
}

fn layer_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    eps: S,
) -> Tensor<S> {
    let d = x.cols();
    let dn = S::from_usize(d);
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mu = row.iter().fold(S::zero(), |a, &b| a + b) / dn;
        let var = row
            .iter()
            .fold(S::zero(), |a, &b| a + (b - mu) * (b - mu))
            / dn;
        let sigma = (var + eps).sqrt();
        for (j, &v) in row.iter().enumerate() {
            out.push((v - mu) / sigma * gain.data()[j] + bias.data()[j]);
        }
    }
    Tensor::from_vec_unchecked(x.shape().to_vec(), out)
}

fn layer_norm_backward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    g: &Tensor<S>,
    eps: S,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let d = x.cols();
    let dn = S::from_usize(d);
    let mut dx = Vec::with_capacity(x.numel());
    let mut dgain = vec![S::zero(); d];
    let mut dbias = vec![S::zero(); d];
    for r in 0..x.rows() {
        let row = x.row(r);
        let grow = &g.data()[r * d..(r + 1) * d];
        let mu = row.iter().fold(S::zero(), |a, &b| a + b) / dn;
        let var = row
            .iter()
            .fold(S::zero(), |a, &b| a + (b - mu) * (b - mu))
            / dn;
        let sigma = (var + eps).sqrt();
        let xhat: Vec<S> = row.iter().map(|&v| (v - mu) / sigma).collect();
        let dxhat: Vec<S> = grow
            .iter()
            .zip(gain.data().iter())
            .map(|(&gv, &gnv)| gv * gnv)
            .collect();
        let mean_dxhat = dxhat.iter().fold(S::zero(), |a, &b| a + b) / dn;
        let mean_dxhat_xhat = dxhat
            .iter()
            .zip(xhat.iter())
            .fold(S::zero(), |a, (&u, &v)| a + u * v)
            / dn;
        for j in 0..d {
            dx.push((dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) / sigma);
            dgain[j] = dgain[j] + grow[j] * xhat[j];
            dbias[j] = dbias[j] + grow[j];
        }
    }
    (
        Tensor::from_vec_unchecked(x.shape().to_vec(), dx),
        Tensor::from_vec_unchecked(vec![d], dgain),
        Tensor::from_vec_unchecked(vec![d], dbias),
    )
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`.
///
/// `f` must rebuild the computation from a fresh leaf each call; evaluation is
/// expected in 64-bit mode for meaningful tolerances.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
{
    grad_check_multi(|tape, vars| f(tape, vars[0]), &[x.clone()], h).map(|errs| errs)
}

/// Multi-input variant used for whole-model checks.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor<f64>], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let v = tape.value(root).scalar_value();
        if !v.is_finite() {
            return Err(TensorError::NonFinite { index: 0 });
        }
        Ok(v)
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if !tape.value(root).scalar_value().is_finite() {
        return Err(TensorError::NonFinite { index: 0 });
    }
    let grads = tape.backward(root);

    let mut max_err = 0.0f64;
    for (input_idx, x) in xs.iter().enumerate() {
        let analytic = grads.get(vars[input_idx], &tape);
        for coord in 0..x.numel() {
            let mut plus = xs.to_vec();
            let mut minus = xs.to_vec();
            let mut pd = plus[input_idx].data().to_vec();
            let mut md = minus[input_idx].data().to_vec();
            pd[coord] += h;
            md[coord] -= h;
            plus[input_idx] = Tensor::from_vec_unchecked(x.shape().to_vec(), pd);
            minus[input_idx] = Tensor::from_vec_unchecked(x.shape().to_vec(), md);
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic.data()[coord];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sum_of_squares_gradient_exact() {
        let x = Tensor::vector(vec![1.0f64, 2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let root = tape.sum_squares(v);
        let grads = tape.backward(root);
        assert_eq!(grads.get(v, &tape).data(), &[2.0, 4.0, 6.0]);
        let err = grad_check(|t, v| Ok(t.sum_squares(v)), &x, 1e-3).unwrap();
        assert!(err < 1e-8, "quadratic grad err {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::vector(vec![1.0f64, -2.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let c = tape.constant(Tensor::scalar(5.0));
        // Root does not depend on v.
        let root = tape.sum_squares(c);
        let grads = tape.backward(root);
        assert_eq!(grads.get(v, &tape).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a = rand_tensor(vec![5, 7], 11);
        let b = rand_tensor(vec![7, 3], 12);
        let err = grad_check_multi(
            |t, vars| {
                let m = t.matmul(vars[0], vars[1])?;
                Ok(t.sum_squares(m))
            },
            &[a.clone(), b.clone()],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "matmul grad err {err}");

        // Gradient of sum(a.b) w.r.t. a is the column-sums of b broadcast.
        let mut tape = Tape::new();
        let av = tape.leaf(a);
        let bv = tape.leaf(b.clone());
        let ones = tape.constant(Tensor::from_vec_unchecked(vec![3, 1], vec![1.0; 3]));
        let prod = tape.matmul(av, bv).unwrap();
        let summed = tape.matmul(prod, ones).unwrap();
        let onesl = tape.constant(Tensor::from_vec_unchecked(vec![1, 5], vec![1.0; 5]));
        let total = tape.matmul(onesl, summed).unwrap();
        let grads = tape.backward(total);
        let da = grads.get(av, &tape);
        for r in 0..5 {
            for c in 0..7 {
                let col_sum: f64 = (0..3).map(|j| b.get2(c, j)).sum();
                assert!((da.get2(r, c) - col_sum).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn layer_norm_collapses_constant_rows_to_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![5.0, 5.0, 5.0]).unwrap());
        let g = tape.leaf(Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_preserves_normalized_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -1.0]).unwrap());
        let g = tape.leaf(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        assert!((tape.value(y).data()[0] - 1.0).abs() < 1e-5);
        assert!((tape.value(y).data()[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let x = rand_tensor(vec![4, 8], 3);
        let gain = rand_tensor(vec![8], 4);
        let bias = rand_tensor(vec![8], 5);
        let err = grad_check_multi(
            |t, vars| {
                let y = t.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
                Ok(t.sum_squares(y))
            },
            &[x, gain, bias],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "layer_norm grad err {err}");
    }

    #[test]
    fn layer_norm_rejects_empty_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 0]));
        let g = tape.leaf(Tensor::zeros(vec![0]));
        let b = tape.leaf(Tensor::zeros(vec![0]));
        assert!(matches!(
            tape.layer_norm(x, g, b, 1e-5),
            Err(TensorError::EmptyDim { .. })
        ));
    }

    #[test]
    fn gelu_values_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 10.0]).unwrap());
        let y = tape.gelu(x);
        assert_eq!(tape.value(y).data()[0], 0.0);
        assert!((tape.value(y).data()[1] - 10.0).abs() < 1e-6);

        let x = Tensor::vector(vec![0.5]).unwrap();
        let err = grad_check(
            |t, v| {
                let y = t.gelu(v);
                Ok(t.sum_squares(y))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "gelu grad err {err}");
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(rand_tensor(vec![3, 5], 9));
        let y = tape.softmax_rows(x);
        let yt = tape.value(y).clone();
        for r in 0..3 {
            let s: f64 = yt.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        // Adding a constant to one row's logits leaves the softmax unchanged.
        let shifted = tape.value(x).map(|v| v + 3.7);
        let mut tape2 = Tape::<f64>::new();
        let x2 = tape2.leaf(shifted);
        let y2 = tape2.softmax_rows(x2);
        for (a, b) in yt.data().iter().zip(tape2.value(y2).data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_and_misc_gradients() {
        let x = rand_tensor(vec![2, 4], 21);
        let err = grad_check(
            |t, v| {
                let s = t.softmax_rows(v);
                let r = t.relu(s);
                Ok(t.sum_squares(r))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "softmax grad err {err}");
    }

    #[test]
    fn cosine_sim_parallel_and_zero_norm() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::vector(vec![2.0, 0.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![5.0, 0.0]).unwrap());
        let c = tape.cosine_sim(a, b).unwrap();
        assert!((tape.value(c).scalar_value() - 1.0).abs() < 1e-12);

        let z = tape.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let c0 = tape.cosine_sim(a, z).unwrap();
        assert_eq!(tape.value(c0).scalar_value(), 0.0);
        let grads = tape.backward(c0);
        assert_eq!(grads.get(a, &tape).data(), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_sim_gradient() {
        let a = rand_tensor(vec![6], 31);
        let b = rand_tensor(vec![6], 32);
        let err = grad_check_multi(
            |t, vars| t.cosine_sim(vars[0], vars[1]),
            &[a, b],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "cosine grad err {err}");
    }

    #[test]
    fn bce_gradient() {
        let logits = rand_tensor(vec![5, 1], 41);
        let targets = Tensor::from_vec_unchecked(vec![5, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0]);
        let err = grad_check(
            |t, v| t.bce_with_logits(v, targets.clone()),
            &logits,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "bce grad err {err}");
    }

    #[test]
    fn structural_op_gradients() {
        let x = rand_tensor(vec![4, 6], 51);
        let err = grad_check(
            |t, v| {
                let top = t.slice_rows(v, 0, 2)?;
                let bottom = t.slice_rows(v, 2, 2)?;
                let swapped = t.concat_rows(&[bottom, top])?;
                let left = t.slice_cols(swapped, 0, 3)?;
                let right = t.slice_cols(swapped, 3, 3)?;
                let merged = t.concat_cols(&[right, left])?;
                let tr = t.transpose(merged);
                Ok(t.sum_squares(tr))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "structural grad err {err}");
    }

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        // Tiny deterministic generator for test fixtures only.
        let n: usize = shape.iter().product();
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            data.push(((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0);
        }
        Tensor::from_vec_unchecked(shape, data)
    }
}
