//! Synthetic feature-trajectory datasets with known chiral structure.
//!
//! Each video's latent path is a noisy straight line: a cluster center plus a
//! signed time ramp along a group direction. A frozen random tanh network
//! warps the latent path into the observed feature space, so observed
//! trajectories are curved while the generative ground truth stays linear —
//! exactly the structure the model's latent line should recover. The
//! "fwd"/"rev" verb pair reverses the ramp sign, giving one binary chiral
//! task per cluster.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::chiral::{AntonymConfig, AntonymEntry, NounGroup};
use crate::data::{FeatureSequence, Split};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthSpec {
    pub n_videos: usize,
    pub seq_len: usize,
    /// Observed feature dimension D.
    pub obs_dim: usize,
    /// Latent dimension m of the generative line.
    pub latent_dim: usize,
    pub n_static_clusters: usize,
    pub n_direction_groups: usize,
    /// Per-frame Gaussian noise sigma in the latent space.
    pub noise: f32,
    /// Layers of the fixed random smooth map (0 = affine observation).
    pub warp_depth: usize,
    /// Amplitude of the time ramp.
    pub drift: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_videos: 2000,
            seq_len: 16,
            obs_dim: 64,
            latent_dim: 8,
            n_static_clusters: 4,
            n_direction_groups: 4,
            noise: 0.05,
            warp_depth: 2,
            drift: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthError {
    InvalidSpec(&'static str),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::InvalidSpec(msg) => write!(f, "invalid synth spec: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SynthError {}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.latent_dim > self.obs_dim {
            return Err(SynthError::InvalidSpec("latent_dim must be <= obs_dim"));
        }
        if self.noise < 0.0 {
            return Err(SynthError::InvalidSpec("noise must be >= 0"));
        }
        if self.n_videos == 0
            || self.seq_len == 0
            || self.obs_dim == 0
            || self.latent_dim == 0
            || self.n_static_clusters == 0
            || self.n_direction_groups == 0
        {
            return Err(SynthError::InvalidSpec("all counts must be >= 1"));
        }
        Ok(())
    }
}

/// The frozen random smooth observation map: an affine lift from the latent
/// space followed by `depth` tanh layers.
struct Warp {
    lift_w: Vec<f32>,  // m x D
    lift_b: Vec<f32>,  // D
    layers: Vec<(Vec<f32>, Vec<f32>)>, // (D x D, D)
    latent_dim: usize,
    obs_dim: usize,
}

impl Warp {
    fn sample(rng: &mut ChaCha8Rng, latent_dim: usize, obs_dim: usize, depth: usize) -> Warp {
        let w_dist = Normal::new(0.0f32, 1.0 / libm::sqrtf(latent_dim as f32)).unwrap();
        let b_dist = Normal::new(0.0f32, 0.1).unwrap();
        let lift_w = (0..latent_dim * obs_dim).map(|_| w_dist.sample(rng)).collect();
        let lift_b = (0..obs_dim).map(|_| b_dist.sample(rng)).collect();
        let layer_dist = Normal::new(0.0f32, 1.0 / libm::sqrtf(obs_dim as f32)).unwrap();
        let layers = (0..depth)
            .map(|_| {
                let w = (0..obs_dim * obs_dim).map(|_| layer_dist.sample(rng)).collect();
                let b = (0..obs_dim).map(|_| b_dist.sample(rng)).collect();
                (w, b)
            })
            .collect();
        Warp { lift_w, lift_b, layers, latent_dim, obs_dim }
    }

    fn apply(&self, latent: &[f32]) -> Vec<f32> {
        let d = self.obs_dim;
        let mut h = self.lift_b.clone();
        for (i, &p) in latent.iter().enumerate().take(self.latent_dim) {
            for j in 0..d {
                h[j] += p * self.lift_w[i * d + j];
            }
        }
        for (w, b) in &self.layers {
            let mut next = b.clone();
            for (i, &hv) in h.iter().enumerate() {
                for j in 0..d {
                    next[j] += hv * w[i * d + j];
                }
            }
            for v in &mut next {
                *v = libm::tanhf(*v);
            }
            h = next;
        }
        h
    }
}

/// Ground-truth assignment of one synthetic video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthAssignment {
    pub cluster: usize,
    pub group: usize,
    pub forward: bool,
    pub split: Split,
}

pub fn assignment(spec: &SynthSpec, index: usize) -> SynthAssignment {
    let group = index % spec.n_direction_groups;
    let forward = (index / spec.n_direction_groups) % 2 == 0;
    let cell_pos = index / (2 * spec.n_direction_groups);
    let cluster = cell_pos % spec.n_static_clusters;
    // 80/20 split, stratified per (group, label) cell.
    let split = if cell_pos % 5 == 4 { Split::Test } else { Split::Train };
    SynthAssignment { cluster, group, forward, split }
}

/// Generate the dataset. Deterministic per seed; each video draws from its
/// own derived stream, so generation order does not matter.
pub fn gen_synth_dataset(spec: &SynthSpec) -> Result<Vec<FeatureSequence>, SynthError> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0f32, 1.0).unwrap();

    let centers: Vec<Vec<f32>> = (0..spec.n_static_clusters)
        .map(|_| (0..spec.latent_dim).map(|_| unit.sample(&mut master)).collect())
        .collect();
    let directions: Vec<Vec<f32>> = (0..spec.n_direction_groups)
        .map(|_| {
            let mut v: Vec<f32> = (0..spec.latent_dim).map(|_| unit.sample(&mut master)).collect();
            let n = libm::sqrtf(v.iter().map(|x| x * x).sum::<f32>());
            for x in &mut v {
                *x /= n.max(1e-12);
            }
            v
        })
        .collect();
    let warp = Warp::sample(&mut master, spec.latent_dim, spec.obs_dim, spec.warp_depth);

    let mut videos = Vec::with_capacity(spec.n_videos);
    for i in 0..spec.n_videos {
        let a = assignment(spec, i);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + i as u64);
        let noise = Normal::new(0.0f32, spec.noise.max(f32::MIN_POSITIVE)).unwrap();
        let sign = if a.forward { 1.0f32 } else { -1.0 };
        let mut data = Vec::with_capacity(spec.seq_len * spec.obs_dim);
        for t in 1..=spec.seq_len {
            // Centered ramp: fwd and rev traverse the same latent segment in
            // opposite order, so order-insensitive pooling cannot tell them
            // apart while the trajectory direction can.
            let coeff = sign * spec.drift * (t as f32 - (spec.seq_len as f32 + 1.0) / 2.0)
                / spec.seq_len as f32;
            let latent: Vec<f32> = (0..spec.latent_dim)
                .map(|j| {
                    let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    centers[a.cluster][j] + coeff * directions[a.group][j] + eps
                })
                .collect();
            data.extend(warp.apply(&latent));
        }
        videos.push(FeatureSequence {
            video_id: format!("synth{i:05}"),
            frames: Tensor::from_vec_unchecked(vec![spec.seq_len, spec.obs_dim], data),
            verb: Some(if a.forward { "fwd".into() } else { "rev".into() }),
            noun: Some(format!("c{}", a.cluster)),
            split: a.split,
        });
    }
    Ok(videos)
}

/// The antonym configuration matching [`gen_synth_dataset`]'s labels: one
/// fwd/rev pair with one noun group per cluster.
pub fn synth_antonym_config(n_clusters: usize) -> AntonymConfig {
    AntonymConfig {
        entries: vec![AntonymEntry {
            verb_pos: "fwd".into(),
            verb_neg: "rev".into(),
            noun_groups: (0..n_clusters)
                .map(|j| NounGroup {
                    group_name: format!("c{j}"),
                    nouns: vec![format!("c{j}")],
                })
                .collect(),
        }],
    }
}

pub fn verb_of(forward: bool) -> String {
    if forward { "fwd".into() } else { "rev".into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            n_videos: 80,
            seq_len: 8,
            obs_dim: 12,
            latent_dim: 4,
            n_static_clusters: 2,
            n_direction_groups: 2,
            noise: 0.05,
            warp_depth: 2,
            drift: 1.0,
            seed: 9,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = gen_synth_dataset(&spec).unwrap();
        let b = gen_synth_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn affine_noiseless_trajectories_are_exactly_collinear() {
        let spec = SynthSpec { noise: 0.0, warp_depth: 0, ..small_spec() };
        let videos = gen_synth_dataset(&spec).unwrap();
        for v in &videos {
            // Consecutive differences must all be equal: affine image of a line.
            let first = v
                .frames
                .slice_rows(1, 1)
                .unwrap()
                .sub(&v.frames.slice_rows(0, 1).unwrap())
                .unwrap();
            for t in 1..spec.seq_len - 1 {
                let step = v
                    .frames
                    .slice_rows(t + 1, 1)
                    .unwrap()
                    .sub(&v.frames.slice_rows(t, 1).unwrap())
                    .unwrap();
                for (a, b) in step.data().iter().zip(first.data()) {
                    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn forward_and_reverse_latents_mirror_in_time() {
        // With zero noise, reversing the ramp sign mirrors the trajectory.
        let spec = SynthSpec { noise: 0.0, warp_depth: 0, ..small_spec() };
        let videos = gen_synth_dataset(&spec).unwrap();
        // Videos 0 and 2 share group 0/cluster 0 with opposite signs.
        let fwd = &videos[0];
        let rev = &videos[2];
        assert_eq!(fwd.verb.as_deref(), Some("fwd"));
        assert_eq!(rev.verb.as_deref(), Some("rev"));
        assert_eq!(fwd.noun, rev.noun);
        for t in 0..spec.seq_len {
            // p_fwd(t) - c = -(p_rev(t) - c) maps through the affine warp to
            // symmetric observations around the center image.
            let f = fwd.frames.row(t);
            let r = rev.frames.row(t);
            let mid: Vec<f32> = f.iter().zip(r.iter()).map(|(a, b)| (a + b) / 2.0).collect();
            // Midpoint is t-independent: equals the warped cluster center.
            if t > 0 {
                let f0 = fwd.frames.row(0);
                let r0 = rev.frames.row(0);
                for (j, &m) in mid.iter().enumerate() {
                    let m0 = (f0[j] + r0[j]) / 2.0;
                    assert!((m - m0).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn label_balance_within_one() {
        let spec = small_spec();
        let videos = gen_synth_dataset(&spec).unwrap();
        let per_cell = spec.n_videos / (2 * spec.n_direction_groups);
        for g in 0..spec.n_direction_groups {
            for fwd in [true, false] {
                let count = (0..spec.n_videos)
                    .filter(|&i| {
                        let a = assignment(&spec, i);
                        a.group == g && a.forward == fwd
                    })
                    .count();
                assert!(count.abs_diff(per_cell) <= 1);
                let _ = &videos;
            }
        }
    }

    #[test]
    fn every_cell_has_both_splits() {
        let spec = small_spec();
        let videos = gen_synth_dataset(&spec).unwrap();
        for g in 0..spec.n_direction_groups {
            for fwd in [true, false] {
                for split in [Split::Train, Split::Test] {
                    let present = (0..spec.n_videos).any(|i| {
                        let a = assignment(&spec, i);
                        a.group == g && a.forward == fwd && a.split == split
                    });
                    assert!(present, "empty cell g={g} fwd={fwd} {split}");
                }
            }
        }
        let trains = videos.iter().filter(|v| v.split == Split::Train).count();
        assert_eq!(trains, spec.n_videos * 4 / 5);
    }

    #[test]
    fn antonym_config_matches_labels() {
        let cfg = synth_antonym_config(3);
        cfg.validate().unwrap();
        assert_eq!(cfg.entries[0].noun_groups.len(), 3);
        assert_eq!(cfg.entries[0].verb_pos, "fwd");
    }
}
