//! Objective and optimization loop.
//!
//! The loss is the per-video sum of squared reconstruction errors plus a
//! weighted cosine similarity between the unit-normalized static and dynamic
//! vectors. Optimization is plain Adam with a reduce-on-plateau learning-rate
//! schedule; the whole loop is deterministic given the seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{self, LiftConfig, LiftParams, ModelError, ModelVars};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlateauConfig {
    pub factor: f32,
    pub patience: usize,
    pub min_lr: f32,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { factor: 0.5, patience: 10, min_lr: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub lambda_orth: f32,
    pub scheduler: PlateauConfig,
    pub seed: u64,
    /// Per-dimension standardization of the input features, fit on the
    /// training set. Off by default.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 128,
            learning_rate: 0.001,
            lambda_orth: 0.1,
            scheduler: PlateauConfig::default(),
            seed: 0,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_rec: f32,
    pub l_orth: f32,
    pub lr: f32,
}

/// One record per completed epoch.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Per-dim (mean, std) when standardization was enabled.
    pub feature_stats: Option<(Vec<f32>, Vec<f32>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyDataset,
    DimMismatch { expected: usize, got: usize },
    NonFiniteGrad { param: String },
    NonFiniteLoss,
    Model(ModelError),
    Tensor(TensorError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyDataset => write!(f, "training set is empty"),
            TrainError::DimMismatch { expected, got } => {
                write!(f, "feature dim {got} does not match config input_dim {expected}")
            }
            TrainError::NonFiniteGrad { param } => {
                write!(f, "non-finite gradient for parameter '{param}'")
            }
            TrainError::NonFiniteLoss => write!(f, "loss became non-finite"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

/// Loss terms on a tape: `total = l_rec + lambda * l_orth`.
///
/// `l_rec` sums squared errors over frames and feature dims; `l_orth` is the
/// cosine similarity of z_s and z_d (0 when either norm vanishes).
pub fn lift_loss_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    frames: Var,
    recon: Var,
    z_s: Var,
    z_d: Var,
    lambda: S,
) -> Result<(Var, Var, Var), TensorError> {
    let diff = tape.sub(frames, recon)?;
    let l_rec = tape.sum_squares(diff);
    let l_orth = tape.cosine_sim(z_s, z_d)?;
    let weighted = tape.scale(l_orth, lambda);
    let total = tape.add(l_rec, weighted)?;
    Ok((total, l_rec, l_orth))
}

/// Plain-value loss evaluation (no gradients).
pub fn lift_loss(
    frames: &Tensor<f32>,
    recon: &Tensor<f32>,
    z_s: &Tensor<f32>,
    z_d: &Tensor<f32>,
    lambda: f32,
) -> Result<(f32, f32, f32), TensorError> {
    let diff = frames.sub(recon)?;
    let l_rec = diff.dot(&diff);
    let (ns, nd) = (z_s.norm(), z_d.norm());
    let l_orth = if ns == 0.0 || nd == 0.0 {
        0.0
    } else {
        z_s.dot(z_d) / (ns * nd)
    };
    Ok((l_rec + lambda * l_orth, l_rec, l_orth))
}

/// Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).
pub struct Adam {
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
    step: u64,
}

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

impl Adam {
    pub fn new(shapes: &[Vec<usize>]) -> Adam {
        Adam {
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step: 0,
        }
    }

    pub fn for_params(params: &[Tensor<f32>]) -> Adam {
        Adam::new(&params.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>())
    }

    /// One update over a parameter list; `names` is used for error reporting
    /// and may be empty.
    pub fn step(
        &mut self,
        params: &mut [Tensor<f32>],
        grads: &[Tensor<f32>],
        lr: f32,
        names: &[String],
    ) -> Result<(), TrainError> {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::powf(ADAM_BETA1, t as f32);
        let bc2 = 1.0 - libm::powf(ADAM_BETA2, t as f32);
        for i in 0..params.len() {
            if !grads[i].is_finite() {
                let param = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(TrainError::NonFiniteGrad { param });
            }
            let m = self.m[i]
                .zip_map(&grads[i], |m, g| ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g)?;
            let v = self.v[i]
                .zip_map(&grads[i], |v, g| ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g)?;
            let new_param = {
                let pd = params[i].data();
                let md = m.data();
                let vd = v.data();
                let data: Vec<f32> = (0..pd.len())
                    .map(|j| {
                        let mhat = md[j] / bc1;
                        let vhat = vd[j] / bc2;
                        pd[j] - lr * mhat / (libm::sqrtf(vhat) + ADAM_EPS)
                    })
                    .collect();
                Tensor::from_vec_unchecked(params[i].shape().to_vec(), data)
            };
            params[i] = new_param;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}

/// Reduce-on-plateau state. An epoch "improves" when its loss beats the best
/// seen by at least a relative 1e-4.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    cfg: PlateauConfig,
    lr: f32,
    best: Option<f32>,
    bad_epochs: usize,
}

pub const PLATEAU_REL_THRESHOLD: f32 = 1e-4;

impl PlateauState {
    pub fn new(cfg: PlateauConfig, initial_lr: f32) -> PlateauState {
        PlateauState { cfg, lr: initial_lr, best: None, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    /// Feed one epoch loss; returns the learning rate for the next epoch.
    pub fn observe(&mut self, epoch_loss: f32) -> f32 {
        let improved = match self.best {
            None => true,
            Some(best) => epoch_loss < best * (1.0 - PLATEAU_REL_THRESHOLD),
        };
        if improved {
            self.best = Some(epoch_loss);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Gradient of the mean batch loss w.r.t. every parameter, plus the summed
/// loss terms. Samples are processed in order; the reduction order is fixed.
fn batch_grads(
    params: &LiftParams,
    batch: &[&Tensor<f32>],
    lambda: f32,
) -> Result<(Vec<Tensor<f32>>, f32, f32), TrainError> {
    let mut acc: Vec<Tensor<f32>> = params
        .tensors()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let mut sum_rec = 0.0f32;
    let mut sum_orth = 0.0f32;
    for frames in batch {
        let mut tape = Tape::<f32>::new();
        let vars = ModelVars::leaf_all(&mut tape, params);
        let frames_var = tape.constant((*frames).clone());
        let (z_s, z_d, recon) =
            model::reconstruct_on_tape(&mut tape, &params.config, &vars, frames_var)?;
        let (total, l_rec, l_orth) =
            lift_loss_on_tape(&mut tape, frames_var, recon, z_s, z_d, lambda)?;
        let total_v = tape.value(total).scalar_value();
        if !total_v.is_finite() {
            return Err(TrainError::NonFiniteLoss);
        }
        sum_rec += tape.value(l_rec).scalar_value();
        sum_orth += tape.value(l_orth).scalar_value();
        let grads = tape.backward(total);
        for (i, &var) in vars.vars().iter().enumerate() {
            acc[i] = acc[i].add(&grads.get(var, &tape))?;
        }
    }
    let inv = 1.0 / batch.len() as f32;
    for g in &mut acc {
        *g = g.scale(inv);
    }
    Ok((acc, sum_rec, sum_orth))
}

/// Train on an in-memory dataset of `T x D` sequences. Deterministic given
/// `(seed, data, config)`.
pub fn train(
    dataset: &[Tensor<f32>],
    lift_cfg: &LiftConfig,
    cfg: &TrainConfig,
) -> Result<(LiftParams, TrainLog), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for t in dataset {
        if t.cols() != lift_cfg.input_dim {
            return Err(TrainError::DimMismatch {
                expected: lift_cfg.input_dim,
                got: t.cols(),
            });
        }
    }

    let mut log = TrainLog::default();
    let owned: Vec<Tensor<f32>>;
    let data: Vec<&Tensor<f32>> = if cfg.standardize {
        let (mean, std) = feature_stats(dataset);
        owned = dataset
            .iter()
            .map(|t| {
                let cols = t.cols();
                Tensor::from_vec_unchecked(
                    t.shape().to_vec(),
                    t.data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (v - mean[i % cols]) / std[i % cols])
                        .collect(),
                )
            })
            .collect();
        log.feature_stats = Some((mean, std));
        owned.iter().collect()
    } else {
        dataset.iter().collect()
    };

    let mut params = LiftParams::init(lift_cfg, cfg.seed)?;
    let names: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
    let mut values: Vec<Tensor<f32>> =
        params.tensors().iter().map(|(_, t)| t.clone()).collect();
    let mut adam = Adam::for_params(&values);
    let mut plateau = PlateauState::new(cfg.scheduler.clone(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5317_F00D);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        // Fisher-Yates reshuffle each epoch.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let lr = plateau.lr();
        let mut sum_rec = 0.0f32;
        let mut sum_orth = 0.0f32;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Tensor<f32>> = chunk.iter().map(|&i| data[i]).collect();
            let (grads, rec, orth) = batch_grads(&params, &batch, cfg.lambda_orth)?;
            sum_rec += rec;
            sum_orth += orth;
            adam.step(&mut values, &grads, lr, &names)?;
            params.set_all(values.clone());
        }
        let mean_rec = sum_rec / n as f32;
        let mean_orth = sum_orth / n as f32;
        log.epochs.push(EpochRecord { epoch, l_rec: mean_rec, l_orth: mean_orth, lr });
        plateau.observe(mean_rec + cfg.lambda_orth * mean_orth);
    }
    Ok((params, log))
}

/// Per-dimension mean and standard deviation over all frames of a dataset.
pub fn feature_stats(dataset: &[Tensor<f32>]) -> (Vec<f32>, Vec<f32>) {
    let cols = dataset[0].cols();
    let mut mean = vec![0.0f64; cols];
    let mut count = 0usize;
    for t in dataset {
        for (i, &v) in t.data().iter().enumerate() {
            mean[i % cols] += v as f64;
        }
        count += t.rows();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; cols];
    for t in dataset {
        for (i, &v) in t.data().iter().enumerate() {
            let d = v as f64 - mean[i % cols];
            var[i % cols] += d * d;
        }
    }
    let std: Vec<f32> = var
        .iter()
        .map(|&v| (libm::sqrt(v / count as f64).max(1e-8)) as f32)
        .collect();
    (mean.into_iter().map(|m| m as f32).collect(), std)
}
