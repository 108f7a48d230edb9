//! Binary probes over frozen descriptors: linear, two-layer MLP, and an
//! attentive probe with a single learnable query, plus the per-group
//! chiral evaluation loop that macro-averages test accuracy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chiral::ChiralGroup;
use crate::model::LiftParams;
use crate::pool::{self, PoolingSpec};
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};
use crate::train::Adam;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum ProbeKind {
    Linear,
    Mlp { hidden: usize, dropout: f32 },
    Attentive,
}

impl ProbeKind {
    pub fn mlp_default() -> ProbeKind {
        ProbeKind::Mlp { hidden: 512, dropout: 0.1 }
    }

    pub fn label(&self) -> String {
        match self {
            ProbeKind::Linear => "linear".into(),
            ProbeKind::Mlp { hidden, dropout } => format!("mlp(h={hidden},p={dropout})"),
            ProbeKind::Attentive => "attentive".into(),
        }
    }
}

/// Probe training recipe. `chiral` is the default (small groups, larger lr);
/// `standard_ar` matches the low-lr long-descriptor recipe.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub lr: f32,
    pub epochs: usize,
    pub weight_decay: f32,
    pub seed: u64,
    pub standardize: bool,
}

impl ProbeSpec {
    pub fn chiral(kind: ProbeKind) -> ProbeSpec {
        ProbeSpec {
            kind,
            lr: 1e-3,
            epochs: 200,
            weight_decay: 1e-4,
            seed: 0,
            standardize: true,
        }
    }

    pub fn standard_ar(kind: ProbeKind) -> ProbeSpec {
        ProbeSpec { lr: 1e-5, epochs: 100, ..ProbeSpec::chiral(kind) }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.epochs == 0 {
            return Err(ProbeError::InvalidSpec("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(ProbeError::InvalidSpec("lr must be positive".into()));
        }
        if let ProbeKind::Mlp { hidden, dropout } = &self.kind {
            if *hidden == 0 {
                return Err(ProbeError::InvalidSpec("hidden must be >= 1".into()));
            }
            if !(0.0..1.0).contains(dropout) {
                return Err(ProbeError::InvalidSpec("dropout must be in [0,1)".into()));
            }
        }
        Ok(())
    }
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec::chiral(ProbeKind::Linear)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeError {
    EmptyTrainSet,
    /// Train labels are all 0 or all 1.
    SingleClass,
    DimMismatch { expected: usize, got: usize },
    EmptyTokenSequence,
    InvalidSpec(String),
    Tensor(TensorError),
}

impl fmt::Display for ProbeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeError::EmptyTrainSet => write!(f, "empty train set"),
            ProbeError::SingleClass => write!(f, "train set contains a single class"),
            ProbeError::DimMismatch { expected, got } => {
                write!(f, "feature dim mismatch: expected {expected}, got {got}")
            }
            ProbeError::EmptyTokenSequence => write!(f, "empty token sequence"),
            ProbeError::InvalidSpec(msg) => write!(f, "invalid probe spec: {msg}"),
            ProbeError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ProbeError {}

impl From<TensorError> for ProbeError {
    fn from(e: TensorError) -> Self {
        ProbeError::Tensor(e)
    }
}

/// Per-dimension affine normalization, fit on train data only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f32>,
    std: Vec<f32>,
}

const STD_FLOOR: f32 = 1e-6;

impl Standardizer {
    pub fn fit(rows: &[Tensor<f32>]) -> Result<Standardizer, ProbeError> {
        let n = rows.len();
        if n == 0 {
            return Err(ProbeError::EmptyTrainSet);
        }
        let dim = rows[0].numel();
        let mut mean = vec![0.0f64; dim];
        for row in rows {
            if row.numel() != dim {
                return Err(ProbeError::DimMismatch { expected: dim, got: row.numel() });
            }
            for (m, &v) in mean.iter_mut().zip(row.data()) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0f64; dim];
        for row in rows {
            for (j, &v) in row.data().iter().enumerate() {
                let d = v as f64 - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|&v| {
                let s = libm::sqrt(v / n as f64) as f32;
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { mean: mean.iter().map(|&m| m as f32).collect(), std })
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, ProbeError> {
        let dim = self.mean.len();
        let cols = x.cols();
        if cols != dim {
            return Err(ProbeError::DimMismatch { expected: dim, got: cols });
        }
        let data: Vec<f32> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % dim]) / self.std[i % dim])
            .collect();
        Ok(Tensor::from_vec_unchecked(x.shape().to_vec(), data))
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }
}

fn check_labels(labels: &[u8]) -> Result<(), ProbeError> {
    if labels.is_empty() {
        return Err(ProbeError::EmptyTrainSet);
    }
    let has0 = labels.iter().any(|&l| l == 0);
    let has1 = labels.iter().any(|&l| l != 0);
    if !(has0 && has1) {
        return Err(ProbeError::SingleClass);
    }
    Ok(())
}

fn stack_rows(rows: &[Tensor<f32>]) -> Result<Tensor<f32>, ProbeError> {
    let dim = rows[0].numel();
    let mut data = Vec::with_capacity(rows.len() * dim);
    for row in rows {
        if row.numel() != dim {
            return Err(ProbeError::DimMismatch { expected: dim, got: row.numel() });
        }
        data.extend_from_slice(row.data());
    }
    Ok(Tensor::from_vec_unchecked(vec![rows.len(), dim], data))
}

fn label_column(labels: &[u8]) -> Tensor<f32> {
    let data: Vec<f32> = labels.iter().map(|&l| if l != 0 { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec_unchecked(vec![labels.len(), 1], data)
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let limit = libm::sqrtf(6.0 / (rows + cols) as f32);
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec_unchecked(vec![rows, cols], data)
}

/// Logit > 0 predicts 1; a tie (logit exactly 0) predicts 0.
fn decide(logit: f32) -> u8 {
    if logit > 0.0 {
        1
    } else {
        0
    }
}

/// Decoupled weight decay, applied to weight matrices after the Adam step.
fn decay(w: &Tensor<f32>, lr: f32, wd: f32) -> Tensor<f32> {
    w.scale(1.0 - lr * wd)
}

/// Logistic-loss linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    w: Tensor<f32>,
    b: f32,
    standardizer: Option<Standardizer>,
}

impl LinearProbe {
    pub fn logit(&self, x: &Tensor<f32>) -> Result<f32, ProbeError> {
        let x = match &self.standardizer {
            Some(s) => s.apply(x)?,
            None => x.clone(),
        };
        if x.numel() != self.w.rows() {
            return Err(ProbeError::DimMismatch { expected: self.w.rows(), got: x.numel() });
        }
        let mut z = self.b;
        for (xv, wv) in x.data().iter().zip(self.w.data()) {
            z += xv * wv;
        }
        Ok(z)
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<u8, ProbeError> {
        Ok(decide(self.logit(x)?))
    }
}

pub fn train_linear_probe(
    train: &[(Tensor<f32>, u8)],
    spec: &ProbeSpec,
) -> Result<LinearProbe, ProbeError> {
    spec.validate()?;
    let labels: Vec<u8> = train.iter().map(|(_, l)| *l).collect();
    check_labels(&labels)?;
    let rows: Vec<Tensor<f32>> = train.iter().map(|(x, _)| x.clone()).collect();
    let standardizer = if spec.standardize {
        Some(Standardizer::fit(&rows)?)
    } else {
        None
    };
    let rows: Vec<Tensor<f32>> = match &standardizer {
        Some(s) => rows.iter().map(|r| s.apply(r)).collect::<Result<_, _>>()?,
        None => rows,
    };
    let dim = rows[0].numel();
    let x = stack_rows(&rows)?;
    let y = label_column(&labels);

    let mut w = Tensor::zeros(vec![dim, 1]);
    let mut b = Tensor::zeros(vec![1, 1]);
    let mut adam = Adam::new(&[vec![dim, 1], vec![1, 1]]);
    for _ in 0..spec.epochs {
        let mut tape: Tape<f32> = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let z = tape.matmul(xv, wv)?;
        let z = tape.add_row_broadcast(z, bv)?;
        let loss = tape.bce_with_logits(z, y.clone())?;
        let grads = tape.backward(loss);
        let gw = grads.get(wv, &tape);
        let gb = grads.get(bv, &tape);
        let mut params = [w, b];
        adam.step(&mut params, &[gw, gb], spec.lr, &[])
            .map_err(|_| ProbeError::InvalidSpec("non-finite gradient".into()))?;
        let [nw, nb] = params;
        w = decay(&nw, spec.lr, spec.weight_decay);
        b = nb;
    }
    Ok(LinearProbe { w, b: b.data()[0], standardizer })
}

/// One-hidden-layer ReLU classifier; dropout is active only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    w1: Tensor<f32>,
    b1: Tensor<f32>,
    w2: Tensor<f32>,
    b2: f32,
    standardizer: Option<Standardizer>,
}

impl MlpProbe {
    pub fn logit(&self, x: &Tensor<f32>) -> Result<f32, ProbeError> {
        let x = match &self.standardizer {
            Some(s) => s.apply(x)?,
            None => x.clone(),
        };
        let dim = self.w1.rows();
        if x.numel() != dim {
            return Err(ProbeError::DimMismatch { expected: dim, got: x.numel() });
        }
        let hidden = self.w1.cols();
        let mut z = self.b2;
        for j in 0..hidden {
            let mut h = self.b1.data()[j];
            for (i, &xv) in x.data().iter().enumerate() {
                h += xv * self.w1.data()[i * hidden + j];
            }
            if h > 0.0 {
                z += h * self.w2.data()[j];
            }
        }
        Ok(z)
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<u8, ProbeError> {
        Ok(decide(self.logit(x)?))
    }
}

pub fn train_mlp_probe(
    train: &[(Tensor<f32>, u8)],
    spec: &ProbeSpec,
) -> Result<MlpProbe, ProbeError> {
    spec.validate()?;
    let (hidden, dropout) = match &spec.kind {
        ProbeKind::Mlp { hidden, dropout } => (*hidden, *dropout),
        _ => (512, 0.1),
    };
    let labels: Vec<u8> = train.iter().map(|(_, l)| *l).collect();
    check_labels(&labels)?;
    let rows: Vec<Tensor<f32>> = train.iter().map(|(x, _)| x.clone()).collect();
    let standardizer = if spec.standardize {
        Some(Standardizer::fit(&rows)?)
    } else {
        None
    };
    let rows: Vec<Tensor<f32>> = match &standardizer {
        Some(s) => rows.iter().map(|r| s.apply(r)).collect::<Result<_, _>>()?,
        None => rows,
    };
    let dim = rows[0].numel();
    let n = rows.len();
    let x = stack_rows(&rows)?;
    let y = label_column(&labels);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w1 = xavier(&mut rng, dim, hidden);
    let mut b1 = Tensor::zeros(vec![1, hidden]);
    let mut w2 = xavier(&mut rng, hidden, 1);
    let mut b2 = Tensor::zeros(vec![1, 1]);
    let mut adam = Adam::for_params(&[w1.clone(), b1.clone(), w2.clone(), b2.clone()]);
    for _ in 0..spec.epochs {
        let mut tape: Tape<f32> = Tape::new();
        let xv = tape.constant(x.clone());
        let w1v = tape.leaf(w1.clone());
        let b1v = tape.leaf(b1.clone());
        let w2v = tape.leaf(w2.clone());
        let b2v = tape.leaf(b2.clone());
        let h = tape.matmul(xv, w1v)?;
        let h = tape.add_row_broadcast(h, b1v)?;
        let h = tape.relu(h);
        let h = if dropout > 0.0 {
            let keep = 1.0 - dropout;
            let mask: Vec<f32> = (0..n * hidden)
                .map(|_| if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let mask = Tensor::from_vec_unchecked(vec![n, hidden], mask);
            tape.mul_const(h, mask)?
        } else {
            h
        };
        let z = tape.matmul(h, w2v)?;
        let z = tape.add_row_broadcast(z, b2v)?;
        let loss = tape.bce_with_logits(z, y.clone())?;
        let grads = tape.backward(loss);
        let gs = [
            grads.get(w1v, &tape),
            grads.get(b1v, &tape),
            grads.get(w2v, &tape),
            grads.get(b2v, &tape),
        ];
        let mut params = [w1, b1, w2, b2];
        adam.step(&mut params, &gs, spec.lr, &[])
            .map_err(|_| ProbeError::InvalidSpec("non-finite gradient".into()))?;
        let [nw1, nb1, nw2, nb2] = params;
        w1 = decay(&nw1, spec.lr, spec.weight_decay);
        b1 = nb1;
        w2 = decay(&nw2, spec.lr, spec.weight_decay);
        b2 = nb2;
    }
    Ok(MlpProbe { w1, b1, w2, b2: b2.data()[0], standardizer })
}

/// A single attention layer with one learnable query pooling a token
/// sequence, followed by a linear classifier. Sequences may differ in
/// length; there is no position encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveProbe {
    query: Tensor<f32>,
    w: Tensor<f32>,
    b: f32,
    standardizer: Option<Standardizer>,
}

impl AttentiveProbe {
    /// Softmax(q·xᵀ/√d)·x over the (standardized) tokens.
    pub fn pool(&self, tokens: &Tensor<f32>) -> Result<Tensor<f32>, ProbeError> {
        if tokens.rows() == 0 || tokens.numel() == 0 {
            return Err(ProbeError::EmptyTokenSequence);
        }
        let tokens = match &self.standardizer {
            Some(s) => s.apply(tokens)?,
            None => tokens.clone(),
        };
        let dim = self.query.numel();
        if tokens.cols() != dim {
            return Err(ProbeError::DimMismatch { expected: dim, got: tokens.cols() });
        }
        let t_len = tokens.rows();
        let scale = 1.0 / libm::sqrtf(dim as f32);
        let mut scores: Vec<f32> = (0..t_len)
            .map(|t| {
                tokens.row(t).iter().zip(self.query.data()).map(|(a, b)| a * b).sum::<f32>()
                    * scale
            })
            .collect();
        let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0;
        for s in &mut scores {
            *s = libm::expf(*s - max);
            total += *s;
        }
        let mut pooled = vec![0.0f32; dim];
        for (t, s) in scores.iter().enumerate() {
            let a = s / total;
            for (j, &v) in tokens.row(t).iter().enumerate() {
                pooled[j] += a * v;
            }
        }
        Ok(Tensor::from_vec_unchecked(vec![dim], pooled))
    }

    /// `aux` is an optional extra descriptor concatenated after the pooled
    /// vector before the classifier.
    pub fn logit(&self, tokens: &Tensor<f32>, aux: Option<&Tensor<f32>>) -> Result<f32, ProbeError> {
        let pooled = self.pool(tokens)?;
        let full = match aux {
            Some(a) => pool::concat_descriptors(&pooled, a),
            None => pooled,
        };
        if full.numel() != self.w.rows() {
            return Err(ProbeError::DimMismatch { expected: self.w.rows(), got: full.numel() });
        }
        let mut z = self.b;
        for (xv, wv) in full.data().iter().zip(self.w.data()) {
            z += xv * wv;
        }
        Ok(z)
    }

    pub fn predict(&self, tokens: &Tensor<f32>, aux: Option<&Tensor<f32>>) -> Result<u8, ProbeError> {
        Ok(decide(self.logit(tokens, aux)?))
    }
}

/// `train` holds one `T_i x d` token matrix per sample; `aux`, when given,
/// supplies one extra descriptor per sample (same order) to concatenate
/// with the pooled vector.
pub fn train_attentive_probe(
    train: &[(Tensor<f32>, u8)],
    aux: Option<&[Tensor<f32>]>,
    spec: &ProbeSpec,
) -> Result<AttentiveProbe, ProbeError> {
    spec.validate()?;
    let labels: Vec<u8> = train.iter().map(|(_, l)| *l).collect();
    check_labels(&labels)?;
    if let Some(aux) = aux {
        if aux.len() != train.len() {
            return Err(ProbeError::DimMismatch { expected: train.len(), got: aux.len() });
        }
    }
    let dim = train[0].0.cols();
    for (tokens, _) in train {
        if tokens.rows() == 0 || tokens.numel() == 0 {
            return Err(ProbeError::EmptyTokenSequence);
        }
        if tokens.cols() != dim {
            return Err(ProbeError::DimMismatch { expected: dim, got: tokens.cols() });
        }
    }
    let standardizer = if spec.standardize {
        // Fit over all train tokens pooled into one row set.
        let mut all = Vec::new();
        for (tokens, _) in train {
            for t in 0..tokens.rows() {
                all.push(Tensor::from_vec_unchecked(vec![dim], tokens.row(t).to_vec()));
            }
        }
        Some(Standardizer::fit(&all)?)
    } else {
        None
    };
    let sequences: Vec<Tensor<f32>> = match &standardizer {
        Some(s) => train.iter().map(|(t, _)| s.apply(t)).collect::<Result<_, _>>()?,
        None => train.iter().map(|(t, _)| t.clone()).collect(),
    };
    let aux_dim = aux.map(|a| a[0].numel()).unwrap_or(0);
    let y = label_column(&labels);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut query = Tensor::zeros(vec![1, dim]);
    let mut w = xavier(&mut rng, dim + aux_dim, 1);
    let mut b = Tensor::zeros(vec![1, 1]);
    let mut adam = Adam::for_params(&[query.clone(), w.clone(), b.clone()]);
    let scale = 1.0 / libm::sqrtf(dim as f32);
    for _ in 0..spec.epochs {
        let mut tape: Tape<f32> = Tape::new();
        let qv = tape.leaf(query.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let mut logits = Vec::with_capacity(sequences.len());
        for (i, tokens) in sequences.iter().enumerate() {
            let tv = tape.constant(tokens.clone());
            let tt = tape.transpose(tv);
            let scores = tape.matmul(qv, tt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            let pooled = tape.matmul(attn, tv)?;
            let full = match aux {
                Some(a) => {
                    let av = tape.constant(Tensor::from_vec_unchecked(
                        vec![1, aux_dim],
                        a[i].data().to_vec(),
                    ));
                    tape.concat_cols(&[pooled, av])?
                }
                None => pooled,
            };
            let z = tape.matmul(full, wv)?;
            logits.push(z);
        }
        let z = tape.concat_rows(&logits)?;
        let z = tape.add_row_broadcast(z, bv)?;
        let loss = tape.bce_with_logits(z, y.clone())?;
        let grads = tape.backward(loss);
        let gs = [grads.get(qv, &tape), grads.get(wv, &tape), grads.get(bv, &tape)];
        let mut params = [query, w, b];
        adam.step(&mut params, &gs, spec.lr, &[])
            .map_err(|_| ProbeError::InvalidSpec("non-finite gradient".into()))?;
        let [nq, nw, nb] = params;
        query = nq;
        w = decay(&nw, spec.lr, spec.weight_decay);
        b = nb;
    }
    Ok(AttentiveProbe { query, w, b: b.data()[0], standardizer })
}

/// One chiral group's test accuracy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupResult {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkippedGroup {
    pub name: String,
    pub reason: String,
}

/// Macro-averaged per-group probe results.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeReport {
    pub groups: Vec<GroupResult>,
    pub skipped: Vec<SkippedGroup>,
    /// Unweighted mean of per-group accuracies; 0 when no group evaluated.
    pub macro_accuracy: f64,
    pub descriptor_dim: usize,
    pub pooling: String,
    pub probe: String,
}

fn group_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Train and evaluate one group. `index` only offsets the probe seed so a
/// parallel driver reproduces the serial result.
pub fn evaluate_group<F>(
    group: &ChiralGroup,
    index: usize,
    get_frames: &F,
    pooling: &PoolingSpec,
    model: Option<&LiftParams>,
    spec: &ProbeSpec,
) -> Result<GroupResult, SkippedGroup>
where
    F: Fn(&str) -> Option<Tensor<f32>>,
{
    let skip = |reason: String| SkippedGroup { name: group.name(), reason };
    let fetch = |pairs: &[(String, u8)]| -> Result<Vec<(Tensor<f32>, u8)>, SkippedGroup> {
        pairs
            .iter()
            .map(|(id, label)| {
                let frames =
                    get_frames(id).ok_or_else(|| skip(format!("missing features for '{id}'")))?;
                if matches!(spec.kind, ProbeKind::Attentive) {
                    // The attentive probe consumes the raw frame tokens.
                    return Ok((frames, *label));
                }
                let desc = pool_descriptor_checked(&frames, pooling, model)
                    .map_err(|e| skip(format!("pooling failed for '{id}': {e}")))?;
                Ok((desc, *label))
            })
            .collect()
    };
    if group.test.is_empty() {
        return Err(skip("empty test set".into()));
    }
    let train = fetch(&group.train)?;
    let test = fetch(&group.test)?;
    let mut spec = spec.clone();
    spec.seed = group_seed(spec.seed, index);

    let correct: usize = match &spec.kind {
        ProbeKind::Attentive => {
            let probe = train_attentive_probe(&train, None, &spec)
                .map_err(|e| skip(format!("{e}")))?;
            test.iter()
                .filter(|(x, l)| probe.predict(x, None).map(|p| p == *l).unwrap_or(false))
                .count()
        }
        ProbeKind::Mlp { .. } => {
            let probe = train_mlp_probe(&train, &spec).map_err(|e| skip(format!("{e}")))?;
            test.iter()
                .filter(|(x, l)| probe.predict(x).map(|p| p == *l).unwrap_or(false))
                .count()
        }
        ProbeKind::Linear => {
            let probe = train_linear_probe(&train, &spec).map_err(|e| skip(format!("{e}")))?;
            test.iter()
                .filter(|(x, l)| probe.predict(x).map(|p| p == *l).unwrap_or(false))
                .count()
        }
    };
    Ok(GroupResult {
        name: group.name(),
        n_train: train.len(),
        n_test: test.len(),
        accuracy: correct as f64 / test.len() as f64,
    })
}

fn pool_descriptor_checked(
    frames: &Tensor<f32>,
    pooling: &PoolingSpec,
    model: Option<&LiftParams>,
) -> Result<Tensor<f32>, pool::PoolError> {
    pool::pool_descriptor(frames, pooling, model)
}

/// One independent probe per group; failures become skip entries rather
/// than aborting the run.
pub fn evaluate_chiral<F>(
    groups: &[ChiralGroup],
    get_frames: F,
    pooling: &PoolingSpec,
    model: Option<&LiftParams>,
    spec: &ProbeSpec,
) -> ProbeReport
where
    F: Fn(&str) -> Option<Tensor<f32>>,
{
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    let mut dim = 0;
    for (i, group) in groups.iter().enumerate() {
        match evaluate_group(group, i, &get_frames, pooling, model, spec) {
            Ok(res) => {
                if dim == 0 {
                    if let Some((id, _)) = group.train.first() {
                        if let Some(frames) = get_frames(id) {
                            dim = match spec.kind {
                                ProbeKind::Attentive => frames.cols(),
                                _ => pool_descriptor_checked(&frames, pooling, model)
                                    .map(|d| d.numel())
                                    .unwrap_or(0),
                            };
                        }
                    }
                }
                results.push(res);
            }
            Err(s) => skipped.push(s),
        }
    }
    let macro_accuracy = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.accuracy).sum::<f64>() / results.len() as f64
    };
    ProbeReport {
        groups: results,
        skipped,
        macro_accuracy,
        descriptor_dim: dim,
        pooling: pooling.label(),
        probe: spec.kind.label(),
    }
}
