//! The LiFT encoder/decoder.
//!
//! Encoder: project each frame feature to the latent width, add sinusoidal
//! position encoding, run a pre-LayerNorm transformer over the sequence
//! together with two learnable tokens, and project + normalize the two token
//! outputs into the static vector `z_s` and dynamic vector `z_d`.
//!
//! Decoder: the latent for frame `t` is constrained to the line
//! `z_t = z_s + (t/T) * z_d`; an MLP (d -> 2d -> 2d -> D, GeLU + LayerNorm
//! after each hidden layer) maps it back to the input feature space.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LiftConfig {
    /// Input feature dimension D.
    pub input_dim: usize,
    /// Latent dimension d.
    pub latent_dim: usize,
    /// Encoder depth.
    pub layers: usize,
    /// Attention heads per layer.
    pub heads: usize,
    /// FFN expansion factor.
    pub ffn_mult: usize,
    /// Nominal sequence length T.
    pub seq_len: usize,
    /// Orthogonality weight lambda.
    pub lambda_orth: f32,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            input_dim: 384,
            latent_dim: 384,
            layers: 4,
            heads: 8,
            ffn_mult: 4,
            seq_len: 16,
            lambda_orth: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    InvalidConfig(String),
    Tensor(TensorError),
    /// Frame index outside `1..=T`.
    FrameIndex { t: usize, seq_len: usize },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::FrameIndex { t, seq_len } => {
                write!(f, "frame index {t} outside 1..={seq_len}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0
            || self.latent_dim == 0
            || self.layers == 0
            || self.heads == 0
            || self.ffn_mult == 0
            || self.seq_len == 0
        {
            return Err(ModelError::InvalidConfig("all counts must be >= 1".to_string()));
        }
        if self.latent_dim % self.heads != 0 {
            return Err(ModelError::InvalidConfig(
                "latent_dim must be divisible by heads".to_string(),
            ));
        }
        if self.lambda_orth < 0.0 {
            return Err(ModelError::InvalidConfig("lambda_orth must be >= 0".to_string()));
        }
        Ok(())
    }
}

/// The (z_s, z_d) pair produced for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub z_s: Tensor<f32>,
    pub z_d: Tensor<f32>,
}

impl Descriptor {
    /// Concatenation `z` of length 2d.
    pub fn concat(&self) -> Tensor<f32> {
        let mut data = self.z_s.data().to_vec();
        data.extend_from_slice(self.z_d.data());
        Tensor::from_vec_unchecked(vec![data.len()], data)
    }

    /// Latent point for frame `t` of `seq_len`: `z_s + (t/seq_len) * z_d`.
    pub fn latent_at(&self, t: usize, seq_len: usize) -> Tensor<f32> {
        let coeff = t as f32 / seq_len as f32;
        self.z_s
            .add(&self.z_d.scale(coeff))
            .expect("descriptor halves share a shape")
    }
}

enum InitKind {
    XavierUniform { fan_in: usize, fan_out: usize },
    Zero,
    One,
    Token,
}

fn shape_table(cfg: &LiftConfig) -> Vec<(String, Vec<usize>, InitKind)> {
    use InitKind::*;
    let d = cfg.latent_dim;
    let big_d = cfg.input_dim;
    let f = cfg.ffn_mult * d;
    let h = 2 * d;
    let mut t: Vec<(String, Vec<usize>, InitKind)> = Vec::new();
    let lin = |t: &mut Vec<(String, Vec<usize>, InitKind)>, name: &str, i: usize, o: usize| {
        t.push((
            alloc::format!("{name}.w"),
            vec![i, o],
            XavierUniform { fan_in: i, fan_out: o },
        ));
        t.push((alloc::format!("{name}.b"), vec![o], Zero));
    };
    let ln = |t: &mut Vec<(String, Vec<usize>, InitKind)>, name: &str, n: usize| {
        t.push((alloc::format!("{name}.gain"), vec![n], One));
        t.push((alloc::format!("{name}.bias"), vec![n], Zero));
    };

    lin(&mut t, "input_proj", big_d, d);
    t.push(("token.static".to_string(), vec![1, d], Token));
    t.push(("token.dynamic".to_string(), vec![1, d], Token));
    for l in 0..cfg.layers {
        ln(&mut t, &alloc::format!("layer{l}.ln1"), d);
        lin(&mut t, &alloc::format!("layer{l}.attn.q"), d, d);
        lin(&mut t, &alloc::format!("layer{l}.attn.k"), d, d);
        lin(&mut t, &alloc::format!("layer{l}.attn.v"), d, d);
        lin(&mut t, &alloc::format!("layer{l}.attn.o"), d, d);
        ln(&mut t, &alloc::format!("layer{l}.ln2"), d);
        lin(&mut t, &alloc::format!("layer{l}.ffn.fc1"), d, f);
        lin(&mut t, &alloc::format!("layer{l}.ffn.fc2"), f, d);
    }
    lin(&mut t, "head.static", d, d);
    ln(&mut t, "head.static.ln", d);
    lin(&mut t, "head.dynamic", d, d);
    ln(&mut t, "head.dynamic.ln", d);
    lin(&mut t, "decoder.fc1", d, h);
    ln(&mut t, "decoder.ln1", h);
    lin(&mut t, "decoder.fc2", h, h);
    ln(&mut t, "decoder.ln2", h);
    lin(&mut t, "decoder.out", h, big_d);
    t
}

/// Exact trainable-parameter count implied by a config.
pub fn count_params(cfg: &LiftConfig) -> usize {
    shape_table(cfg)
        .iter()
        .map(|(_, shape, _)| shape.iter().product::<usize>())
        .sum()
}

/// Parameter names and shapes in canonical order.
pub fn expected_shapes(cfg: &LiftConfig) -> Vec<(String, Vec<usize>)> {
    shape_table(cfg)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect()
}

/// All trainable weights, in the canonical order of [`expected_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct LiftParams {
    pub config: LiftConfig,
    tensors: Vec<(String, Tensor<f32>)>,
}

impl LiftParams {
    /// Deterministic initialization: Xavier-uniform linear weights, zero
    /// biases, normal(0, 0.02) tokens, LayerNorm gain 1 / bias 0.
    pub fn init(cfg: &LiftConfig, seed: u64) -> Result<LiftParams, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_dist = Normal::new(0.0f32, 0.02).expect("valid sigma");
        let mut tensors = Vec::new();
        for (name, shape, kind) in shape_table(cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match kind {
                InitKind::Zero => vec![0.0; n],
                InitKind::One => vec![1.0; n],
                InitKind::Token => (0..n).map(|_| token_dist.sample(&mut rng)).collect(),
                InitKind::XavierUniform { fan_in, fan_out } => {
                    let limit = libm::sqrtf(6.0 / (fan_in + fan_out) as f32);
                    let dist = Uniform::new_inclusive(-limit, limit);
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            tensors.push((name, Tensor::from_vec_unchecked(shape, data)));
        }
        Ok(LiftParams { config: cfg.clone(), tensors })
    }

    /// Rebuild from named tensors; the set must match the config exactly.
    pub fn from_named(
        cfg: &LiftConfig,
        mut named: Vec<(String, Tensor<f32>)>,
    ) -> Result<LiftParams, ModelError> {
        cfg.validate()?;
        let expected = expected_shapes(cfg);
        if named.len() != expected.len() {
            // Find a concrete culprit for the error message.
            for (name, _) in &expected {
                if !named.iter().any(|(n, _)| n == name) {
                    return Err(ModelError::InvalidConfig(alloc::format!(
                        "missing tensor '{name}'"
                    )));
                }
            }
            let extra = named
                .iter()
                .find(|(n, _)| !expected.iter().any(|(e, _)| e == n))
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            return Err(ModelError::InvalidConfig(alloc::format!(
                "unexpected tensor '{extra}'"
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for (name, shape) in expected {
            let idx = named.iter().position(|(n, _)| *n == name).ok_or_else(|| {
                ModelError::InvalidConfig(alloc::format!("missing tensor '{name}'"))
            })?;
            let (_, t) = named.swap_remove(idx);
            if t.shape() != shape.as_slice() {
                return Err(ModelError::InvalidConfig(alloc::format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            tensors.push((name, t));
        }
        Ok(LiftParams { config: cfg.clone(), tensors })
    }

    pub fn tensors(&self) -> &[(String, Tensor<f32>)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replace all tensor values, keeping names/shapes (optimizer step).
    pub fn set_all(&mut self, values: Vec<Tensor<f32>>) {
        debug_assert_eq!(values.len(), self.tensors.len());
        for ((_, slot), v) in self.tensors.iter_mut().zip(values) {
            debug_assert_eq!(slot.shape(), v.shape());
            *slot = v;
        }
    }
}

/// Parameter leaves registered on a tape, in canonical order.
pub struct ModelVars {
    vars: Vec<Var>,
    names: Vec<String>,
}

impl ModelVars {
    /// Register every parameter of `params` as a differentiable leaf.
    pub fn leaf_all<S: Scalar>(tape: &mut Tape<S>, params: &LiftParams) -> ModelVars {
        let mut vars = Vec::with_capacity(params.tensors.len());
        let mut names = Vec::with_capacity(params.tensors.len());
        for (name, t) in &params.tensors {
            vars.push(tape.leaf(t.cast::<S>()));
            names.push(name.clone());
        }
        ModelVars { vars, names }
    }

    /// Register from already-cast tensors (gradient checking).
    pub fn leaf_tensors<S: Scalar>(
        tape: &mut Tape<S>,
        named: &[(String, Tensor<S>)],
    ) -> ModelVars {
        let mut vars = Vec::with_capacity(named.len());
        let mut names = Vec::with_capacity(named.len());
        for (name, t) in named {
            vars.push(tape.leaf(t.clone()));
            names.push(name.clone());
        }
        ModelVars { vars, names }
    }

    /// Wrap existing tape variables (gradient checking over shared leaves).
    pub fn from_vars(names: &[String], vars: &[Var]) -> ModelVars {
        debug_assert_eq!(names.len(), vars.len());
        ModelVars { vars: vars.to_vec(), names: names.to_vec() }
    }

    pub fn get(&self, name: &str) -> Var {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Interleaved sin/cos position encoding with base 10^4, rows t = 0..T-1.
/// Every component lies in [-1, 1].
pub fn sinusoidal_pe<S: Scalar>(seq_len: usize, dim: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(seq_len * dim);
    for t in 0..seq_len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = t as f64 / libm::pow(10_000.0, 2.0 * pair / dim as f64);
            let v = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
            data.push(S::from_f64(v));
        }
    }
    Tensor::from_vec_unchecked(vec![seq_len, dim], data)
}

fn linear<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    vars: &ModelVars,
    name: &str,
) -> Result<Var, TensorError> {
    let w = vars.get(&alloc::format!("{name}.w"));
    let b = vars.get(&alloc::format!("{name}.b"));
    let y = tape.matmul(x, w)?;
    tape.add_row_broadcast(y, b)
}

fn layer_norm<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    vars: &ModelVars,
    name: &str,
) -> Result<Var, TensorError> {
    let g = vars.get(&alloc::format!("{name}.gain"));
    let b = vars.get(&alloc::format!("{name}.bias"));
    tape.layer_norm(x, g, b, S::from_f64(LAYER_NORM_EPS))
}

/// Per-head scaled dot-product attention; heads are column slices of the
/// q/k/v projections, concatenated and output-projected.
fn multi_head_attention<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    vars: &ModelVars,
    prefix: &str,
    heads: usize,
) -> Result<Var, TensorError> {
    let d = tape.value(x).cols();
    debug_assert_eq!(d % heads, 0);
    let head_dim = d / heads;
    let q = linear(tape, x, vars, &alloc::format!("{prefix}.q"))?;
    let k = linear(tape, x, vars, &alloc::format!("{prefix}.k"))?;
    let v = linear(tape, x, vars, &alloc::format!("{prefix}.v"))?;
    let scale = S::from_f64(1.0 / libm::sqrt(head_dim as f64));
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled);
        outs.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&outs)?;
    linear(tape, merged, vars, &alloc::format!("{prefix}.o"))
}

/// Encoder forward on a tape. `frames` is a `[T x D]` node.
pub fn encode_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &LiftConfig,
    vars: &ModelVars,
    frames: Var,
) -> Result<(Var, Var), ModelError> {
    let t_len = tape.value(frames).rows();
    if tape.value(frames).cols() != cfg.input_dim {
        return Err(ModelError::Tensor(TensorError::DimMismatch {
            context: "encode: frame dim",
            left: tape.value(frames).shape().to_vec(),
            right: vec![t_len, cfg.input_dim],
        }));
    }
    let proj = linear(tape, frames, vars, "input_proj")?;
    let pe = tape.constant(sinusoidal_pe::<S>(t_len, cfg.latent_dim));
    let embedded = tape.add(proj, pe)?;
    // Position encoding is not added to the learnable tokens.
    let tok_s = vars.get("token.static");
    let tok_d = vars.get("token.dynamic");
    let mut x = tape.concat_rows(&[tok_s, tok_d, embedded])?;

    for l in 0..cfg.layers {
        let norm1 = layer_norm(tape, x, vars, &alloc::format!("layer{l}.ln1"))?;
        let attn = multi_head_attention(
            tape,
            norm1,
            vars,
            &alloc::format!("layer{l}.attn"),
            cfg.heads,
        )?;
        x = tape.add(x, attn)?;
        let norm2 = layer_norm(tape, x, vars, &alloc::format!("layer{l}.ln2"))?;
        let h = linear(tape, norm2, vars, &alloc::format!("layer{l}.ffn.fc1"))?;
        let h = tape.gelu(h);
        let h = linear(tape, h, vars, &alloc::format!("layer{l}.ffn.fc2"))?;
        x = tape.add(x, h)?;
    }

    let s_out = tape.slice_rows(x, 0, 1)?;
    let d_out = tape.slice_rows(x, 1, 1)?;
    let s_proj = linear(tape, s_out, vars, "head.static")?;
    let z_s = layer_norm(tape, s_proj, vars, "head.static.ln")?;
    let d_proj = linear(tape, d_out, vars, "head.dynamic")?;
    let z_d = layer_norm(tape, d_proj, vars, "head.dynamic.ln")?;
    Ok((z_s, z_d))
}

/// Decoder forward for one frame index `t` in `1..=T`.
pub fn decode_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &LiftConfig,
    vars: &ModelVars,
    z_s: Var,
    z_d: Var,
    t: usize,
    seq_len: usize,
) -> Result<Var, ModelError> {
    if t < 1 || t > seq_len {
        return Err(ModelError::FrameIndex { t, seq_len });
    }
    let coeff = S::from_f64(t as f64 / seq_len as f64);
    let scaled = tape.scale(z_d, coeff);
    let z_t = tape.add(z_s, scaled)?;
    let h = linear(tape, z_t, vars, "decoder.fc1")?;
    let h = tape.gelu(h);
    let h = layer_norm(tape, h, vars, "decoder.ln1")?;
    let h = linear(tape, h, vars, "decoder.fc2")?;
    let h = tape.gelu(h);
    let h = layer_norm(tape, h, vars, "decoder.ln2")?;
    let out = linear(tape, h, vars, "decoder.out")?;
    debug_assert_eq!(tape.value(out).cols(), cfg.input_dim);
    Ok(out)
}

/// Full autoencoder pass: descriptor tokens plus stacked reconstructions.
pub fn reconstruct_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &LiftConfig,
    vars: &ModelVars,
    frames: Var,
) -> Result<(Var, Var, Var), ModelError> {
    let t_len = tape.value(frames).rows();
    let (z_s, z_d) = encode_on_tape(tape, cfg, vars, frames)?;
    let mut rows = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        rows.push(decode_on_tape(tape, cfg, vars, z_s, z_d, t, t_len)?);
    }
    let recon = tape.concat_rows(&rows)?;
    Ok((z_s, z_d, recon))
}

/// Encode a single video (inference path, f32).
pub fn encode(params: &LiftParams, frames: &Tensor<f32>) -> Result<Descriptor, ModelError> {
    let mut tape = Tape::<f32>::new();
    let vars = ModelVars::leaf_all(&mut tape, params);
    let frames_var = tape.constant(frames.clone());
    let (z_s, z_d) = encode_on_tape(&mut tape, &params.config, &vars, frames_var)?;
    Ok(Descriptor {
        z_s: tape.value(z_s).flatten(),
        z_d: tape.value(z_d).flatten(),
    })
}

/// Decode a descriptor at frame `t` of `seq_len` (inference path, f32).
pub fn decode_at(
    params: &LiftParams,
    desc: &Descriptor,
    t: usize,
    seq_len: usize,
) -> Result<Tensor<f32>, ModelError> {
    let mut tape = Tape::<f32>::new();
    let vars = ModelVars::leaf_all(&mut tape, params);
    let z_s = tape.constant(Tensor::from_vec_unchecked(
        vec![1, desc.z_s.numel()],
        desc.z_s.data().to_vec(),
    ));
    let z_d = tape.constant(Tensor::from_vec_unchecked(
        vec![1, desc.z_d.numel()],
        desc.z_d.data().to_vec(),
    ));
    let out = decode_on_tape(&mut tape, &params.config, &vars, z_s, z_d, t, seq_len)?;
    Ok(tape.value(out).flatten())
}

/// Encode then decode every frame; equals composing [`encode`] with
/// [`decode_at`] for each index.
pub fn forward_reconstruct(
    params: &LiftParams,
    frames: &Tensor<f32>,
) -> Result<(Descriptor, Tensor<f32>), ModelError> {
    let mut tape = Tape::<f32>::new();
    let vars = ModelVars::leaf_all(&mut tape, params);
    let frames_var = tape.constant(frames.clone());
    let (z_s, z_d, recon) = reconstruct_on_tape(&mut tape, &params.config, &vars, frames_var)?;
    Ok((
        Descriptor {
            z_s: tape.value(z_s).flatten(),
            z_d: tape.value(z_d).flatten(),
        },
        tape.value(recon).clone(),
    ))
}
