//! The `lift` command-line interface: argument parsing, subcommand
//! dispatch, and run manifests.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use lift_core::chiral::{self, AntonymConfig, ChiralGroup};
use lift_core::model::{self, LiftConfig, LiftParams};
use lift_core::pool::PoolingSpec;
use lift_core::probe::{self, GroupResult, ProbeKind, ProbeReport, ProbeSpec, SkippedGroup};
use lift_core::stats;
use lift_core::synth::{self, SynthSpec};
use lift_core::tensor::Tensor;
use lift_core::train::{self, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::featureio;
use crate::manifest::{self, Manifest, ManifestRecord};

/// Exit 0 on success, 1 on validation errors, 2 on I/O or format errors.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

macro_rules! from_io_like {
    ($t:ty) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Io(e.to_string())
            }
        }
    };
}
from_io_like!(std::io::Error);
from_io_like!(crate::featureio::FormatError);
from_io_like!(crate::manifest::ManifestError);
from_io_like!(crate::checkpoint::CheckpointError);

macro_rules! from_validation_like {
    ($t:ty) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    };
}
from_validation_like!(lift_core::model::ModelError);
from_validation_like!(lift_core::train::TrainError);
from_validation_like!(lift_core::synth::SynthError);
from_validation_like!(lift_core::chiral::ChiralError);
from_validation_like!(lift_core::probe::ProbeError);
from_validation_like!(lift_core::stats::StatsError);
from_validation_like!(lift_core::pool::PoolError);

#[derive(Parser, Debug)]
#[command(name = "lift", version, about = "Static/dynamic video descriptors via a linearity-constrained autoencoder")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic feature-trajectory dataset.
    Synth(SynthArgs),
    /// Train the autoencoder over a manifest.
    Train(TrainArgs),
    /// Encode every video in a manifest to a descriptor.
    Encode(EncodeArgs),
    /// Build chiral groups from a manifest and an antonym config.
    Mine(MineArgs),
    /// Train and evaluate per-group probes.
    Probe(ProbeArgs),
    /// Time-variance of every video in a manifest.
    Tv(TvArgs),
    /// Project one video's original and reconstructed trajectories to 2-D.
    Project(ProjectArgs),
    /// Print the parameter count of a model configuration.
    Params(ParamsArgs),
    /// Sweep latent dim and train-data fraction, one probe run per cell.
    Ablate(AblateArgs),
}

fn default_seed() -> u64 {
    std::env::var("LIFT_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 16)]
    t: usize,
    /// Observed feature dimension.
    #[arg(long = "dim", default_value_t = 64)]
    dim: usize,
    /// Latent dimension of the generative line.
    #[arg(long, default_value_t = 8)]
    latent: usize,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 4)]
    groups: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f32,
    #[arg(long, default_value_t = 2)]
    warp_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    drift: f32,
    #[arg(long, default_value_t = default_seed())]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// Input feature dimension D (default: taken from the data).
    #[arg(long)]
    input_dim: Option<usize>,
    /// Latent dimension d.
    #[arg(long, default_value_t = 384)]
    latent_dim: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    ffn_mult: usize,
    /// Frames per video after resampling.
    #[arg(long, default_value_t = 16)]
    t: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f32,
}

impl ModelArgs {
    fn config(&self, data_dim: Option<usize>) -> Result<LiftConfig, CliError> {
        let input_dim = self
            .input_dim
            .or(data_dim)
            .ok_or_else(|| CliError::Validation("--input-dim required (no data to infer it)".into()))?;
        let cfg = LiftConfig {
            input_dim,
            latent_dim: self.latent_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            seq_len: self.t,
            lambda_orth: self.lambda,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f32,
    /// Standardize features per dimension before training.
    #[arg(long, default_value_t = false)]
    standardize: bool,
    /// Train on this fraction of the train split (seeded subset).
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Also use test-split videos for autoencoder training.
    #[arg(long, default_value_t = false)]
    include_test: bool,
    /// Optional CSV training log (epoch, l_rec, l_orth, lr).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = default_seed())]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct EncodeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV output path (or a directory with --format bin).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug, Serialize)]
struct MineArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Antonym/noun-group config (JSON).
    #[arg(long)]
    antonyms: PathBuf,
    /// Groups output (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ProbeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Mined groups file (JSON, from `lift mine`).
    #[arg(long)]
    groups: PathBuf,
    /// mean | time_weighted | full_concat | lift | single_frame:<i> | k_frame:<k>
    #[arg(long, default_value = "lift")]
    pooling: String,
    /// Required for `lift` pooling.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// linear | mlp | attentive
    #[arg(long, default_value = "linear")]
    probe: String,
    /// Frames per video after resampling.
    #[arg(long, default_value_t = 16)]
    t: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f32,
    #[arg(long, default_value_t = true)]
    standardize: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// JSON report output.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV table (group, n_train, n_test, accuracy).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = default_seed())]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct TvArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// CSV output (video_id, tv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ProjectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Video to project.
    #[arg(long)]
    video: String,
    /// CSV output (video_id, frame, pc1, pc2, kind).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ParamsArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    /// CSV output (latent_dim, fraction, macro_accuracy).
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated latent dims.
    #[arg(long, default_value = "16,32,64")]
    dims: String,
    /// Comma-separated train-data fractions.
    #[arg(long, default_value = "0.1,0.5,1.0")]
    fractions: String,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    t: usize,
    #[arg(long, default_value_t = default_seed())]
    seed: u64,
}

/// Entry point used by both `main` and the test suite. Returns the process
/// exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Mine(args) => cmd_mine(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Tv(args) => cmd_tv(args),
        Command::Project(args) => cmd_project(args),
        Command::Params(args) => cmd_params(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    version: String,
}

fn write_run_manifest(
    path: &Path,
    subcommand: &str,
    config: &impl Serialize,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        subcommand: subcommand.into(),
        config: serde_json::to_value(config).expect("args serialize"),
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    fs::write(path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    Ok(())
}

/// Run-manifest path for a primary output: `<dir>/run_manifest.json` for
/// directories, `<file>.run.json` otherwise.
fn run_manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("run_manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        out.with_file_name(name)
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        n_videos: args.n,
        seq_len: args.t,
        obs_dim: args.dim,
        latent_dim: args.latent,
        n_static_clusters: args.clusters,
        n_direction_groups: args.groups,
        noise: args.noise,
        warp_depth: args.warp_depth,
        drift: args.drift,
        seed: args.seed,
    };
    let dataset = synth::gen_synth_dataset(&spec)?;
    let features_dir = args.out.join("features");
    fs::create_dir_all(&features_dir)?;
    let mut records = Vec::with_capacity(dataset.len());
    for seq in &dataset {
        let rel = format!("features/{}.lft", seq.video_id);
        featureio::write_feature_file(&seq.frames, &args.out.join(&rel))?;
        records.push(ManifestRecord {
            video_id: seq.video_id.clone(),
            path: rel,
            frames: seq.frames.rows(),
            dim: seq.frames.cols(),
            verb: seq.verb.clone(),
            noun: seq.noun.clone(),
            split: seq.split,
        });
    }
    let manifest = Manifest::new(records, args.out.clone());
    manifest::save_manifest(&manifest, &args.out.join("manifest.jsonl"))?;

    let antonyms = synth::synth_antonym_config(spec.n_static_clusters);
    fs::write(
        args.out.join("antonyms.json"),
        serde_json::to_string_pretty(&antonyms).unwrap() + "\n",
    )?;
    write_run_manifest(
        &run_manifest_path(&args.out, true),
        "synth",
        &args,
        args.seed,
        &[],
        &[&args.out],
    )?;
    eprintln!(
        "synth: wrote {} videos (T={}, D={}) to {}",
        dataset.len(),
        spec.seq_len,
        spec.obs_dim,
        args.out.display()
    );
    Ok(())
}

/// Load, resample, and order the training videos for a manifest.
fn load_training_set(
    manifest: &Manifest,
    seq_len: usize,
    fraction: f64,
    include_test: bool,
    seed: u64,
) -> Result<Vec<Tensor<f32>>, CliError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Validation(format!(
            "--fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut ids: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| include_test || r.split == lift_core::data::Split::Train)
        .map(|r| r.video_id.as_str())
        .collect();
    if fraction < 1.0 {
        let keep = ((ids.len() as f64 * fraction).ceil() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
        ids.shuffle(&mut rng);
        ids.truncate(keep);
        ids.sort();
    }
    let mut dataset = Vec::with_capacity(ids.len());
    for id in ids {
        let frames = manifest.load_frames(id)?;
        dataset.push(featureio::resample_frames(&frames, seq_len));
    }
    Ok(dataset)
}

fn train_to_checkpoint(
    manifest: &Manifest,
    cfg: &LiftConfig,
    train_cfg: &TrainConfig,
    fraction: f64,
    include_test: bool,
) -> Result<(Checkpoint, lift_core::train::TrainLog), CliError> {
    let dataset = load_training_set(
        manifest,
        cfg.seq_len,
        fraction,
        include_test,
        train_cfg.seed,
    )?;
    let (params, log) = train::train(&dataset, cfg, train_cfg)?;
    let final_loss = log
        .epochs
        .last()
        .map(|e| e.l_rec + cfg.lambda_orth * e.l_orth)
        .unwrap_or(f32::NAN);
    let ckpt = Checkpoint {
        params,
        meta: CheckpointMeta {
            epoch: log.epochs.len(),
            final_loss,
            seed: train_cfg.seed,
            feature_stats: log.feature_stats.clone(),
        },
    };
    Ok((ckpt, log))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let data_dim = manifest.records.first().map(|r| r.dim);
    let cfg = args.model.config(data_dim)?;
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        lambda_orth: args.model.lambda,
        scheduler: Default::default(),
        seed: args.seed,
        standardize: args.standardize,
    };
    let (ckpt, log) =
        train_to_checkpoint(&manifest, &cfg, &train_cfg, args.fraction, args.include_test)?;
    checkpoint::save_checkpoint(&ckpt, &args.out)?;
    if let Some(log_path) = &args.log {
        let mut csv = String::from("epoch,l_rec,l_orth,lr\n");
        for e in &log.epochs {
            csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.l_rec, e.l_orth, e.lr));
        }
        fs::write(log_path, csv)?;
    }
    write_run_manifest(
        &run_manifest_path(&args.out, false),
        "train",
        &args,
        args.seed,
        &[&args.manifest],
        &[&args.out],
    )?;
    eprintln!(
        "train: {} epochs, final loss {:.6}, saved {}",
        ckpt.meta.epoch,
        ckpt.meta.final_loss,
        args.out.display()
    );
    Ok(())
}

fn apply_stats(frames: &Tensor<f32>, stats: &Option<(Vec<f32>, Vec<f32>)>) -> Tensor<f32> {
    match stats {
        None => frames.clone(),
        Some((mean, std)) => {
            let dim = mean.len();
            let data: Vec<f32> = frames
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - mean[i % dim]) / std[i % dim])
                .collect();
            Tensor::from_vec(frames.shape().to_vec(), data).expect("standardized frames finite")
        }
    }
}

/// Deterministic worker pool: `f(i)` for each index, results in index
/// order regardless of scheduling.
fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let workers = workers.max(1);
    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut i = w;
                while i < n {
                    out.push((i, f(i)));
                    i += workers;
                }
                out
            }));
        }
        for handle in handles {
            for (i, v) in handle.join().expect("worker panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("all slots filled")).collect()
}

fn cmd_encode(args: EncodeArgs) -> Result<(), CliError> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let ckpt = checkpoint::load_checkpoint(&args.checkpoint)?;
    let seq_len = ckpt.params.config.seq_len;
    let params = Arc::new(ckpt.params);
    let stats = ckpt.meta.feature_stats.clone();

    let descriptors: Vec<Result<(String, Tensor<f32>), CliError>> =
        parallel_map(manifest.records.len(), args.workers, |i| {
            let record = &manifest.records[i];
            let frames = manifest.load_frames(&record.video_id)?;
            let frames = apply_stats(&featureio::resample_frames(&frames, seq_len), &stats);
            let desc = model::encode(&params, &frames)?;
            Ok((record.video_id.clone(), desc.concat()))
        });

    match args.format.as_str() {
        "csv" => {
            let mut out = String::from("video_id");
            let dim = 2 * params.config.latent_dim;
            for j in 0..dim {
                out.push_str(&format!(",z{j}"));
            }
            out.push('\n');
            for item in descriptors {
                let (id, z) = item?;
                out.push_str(&id);
                for v in z.data() {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
            fs::write(&args.out, out)?;
        }
        "bin" => {
            fs::create_dir_all(&args.out)?;
            let mut records = Vec::new();
            for item in descriptors {
                let (id, z) = item?;
                let row = Tensor::from_vec(vec![1, z.numel()], z.data().to_vec())
                    .map_err(|e| CliError::Validation(e.to_string()))?;
                let rel = format!("{id}.lft");
                featureio::write_feature_file(&row, &args.out.join(&rel))?;
                let src = manifest.record(&id).unwrap();
                records.push(ManifestRecord {
                    video_id: id,
                    path: rel,
                    frames: 1,
                    dim: row.cols(),
                    verb: src.verb.clone(),
                    noun: src.noun.clone(),
                    split: src.split,
                });
            }
            let desc_manifest = Manifest::new(records, args.out.clone());
            manifest::save_manifest(&desc_manifest, &args.out.join("manifest.jsonl"))?;
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown --format '{other}' (expected csv or bin)"
            )))
        }
    }
    let is_dir = args.format == "bin";
    write_run_manifest(
        &run_manifest_path(&args.out, is_dir),
        "encode",
        &args,
        ckpt.meta.seed,
        &[&args.manifest, &args.checkpoint],
        &[&args.out],
    )?;
    eprintln!(
        "encode: {} descriptors ({}-dim) to {}",
        manifest.records.len(),
        2 * params.config.latent_dim,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
struct MinedGroups {
    groups: Vec<ChiralGroup>,
    dropped: Vec<String>,
}

fn cmd_mine(args: MineArgs) -> Result<(), CliError> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let text = fs::read_to_string(&args.antonyms)?;
    let config: AntonymConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.antonyms.display())))?;
    config.validate()?;
    let build = chiral::build_chiral_groups(&manifest.video_meta(), &config);
    let stats = chiral::group_stats(&build.groups);
    let out = MinedGroups { groups: build.groups, dropped: build.dropped };
    fs::write(&args.out, serde_json::to_string_pretty(&out).unwrap() + "\n")?;
    write_run_manifest(
        &run_manifest_path(&args.out, false),
        "mine",
        &args,
        0,
        &[&args.manifest, &args.antonyms],
        &[&args.out],
    )?;
    eprintln!(
        "mine: {} groups ({} dropped), {:.1} train / {:.1} test videos per group",
        stats.n_groups,
        out.dropped.len(),
        stats.mean_train_per_group,
        stats.mean_test_per_group
    );
    Ok(())
}

fn parse_pooling(s: &str, seq_len: usize) -> Result<PoolingSpec, CliError> {
    let spec = match s {
        "mean" => PoolingSpec::Mean,
        "time_weighted" => PoolingSpec::TimeWeighted,
        "full_concat" => PoolingSpec::FullConcat,
        "lift" => PoolingSpec::LiftDescriptor,
        other => {
            if let Some(i) = other.strip_prefix("single_frame:") {
                let i: usize = i
                    .parse()
                    .map_err(|_| CliError::Validation(format!("bad frame index '{i}'")))?;
                PoolingSpec::SingleFrame(i)
            } else if let Some(k) = other.strip_prefix("k_frame:") {
                let k: usize = k
                    .parse()
                    .map_err(|_| CliError::Validation(format!("bad frame count '{k}'")))?;
                if k == 0 {
                    return Err(CliError::Validation("k must be >= 1".into()));
                }
                PoolingSpec::KFrameConcat(PoolingSpec::linspace_indices(k, seq_len))
            } else {
                return Err(CliError::Validation(format!("unknown pooling '{other}'")));
            }
        }
    };
    Ok(spec)
}

fn parse_probe_kind(s: &str) -> Result<ProbeKind, CliError> {
    match s {
        "linear" => Ok(ProbeKind::Linear),
        "mlp" => Ok(ProbeKind::mlp_default()),
        "attentive" => Ok(ProbeKind::Attentive),
        other => Err(CliError::Validation(format!("unknown probe '{other}'"))),
    }
}

/// Shared probe driver: resolves features, runs one probe per group (in
/// parallel when `workers > 1`), and assembles the report.
fn run_probe(
    manifest: &Manifest,
    groups: &[ChiralGroup],
    pooling: &PoolingSpec,
    model: Option<&LiftParams>,
    feature_stats: &Option<(Vec<f32>, Vec<f32>)>,
    spec: &ProbeSpec,
    seq_len: usize,
    workers: usize,
) -> Result<ProbeReport, CliError> {
    // Preload every referenced video once.
    let mut cache: HashMap<String, Tensor<f32>> = HashMap::new();
    for group in groups {
        for (id, _) in group.train.iter().chain(&group.test) {
            if !cache.contains_key(id) {
                if let Ok(frames) = manifest.load_frames(id) {
                    let frames = featureio::resample_frames(&frames, seq_len);
                    let frames = if matches!(pooling, PoolingSpec::LiftDescriptor) {
                        apply_stats(&frames, feature_stats)
                    } else {
                        frames
                    };
                    cache.insert(id.clone(), frames);
                }
            }
        }
    }
    let lookup = |id: &str| cache.get(id).cloned();
    let outcomes: Vec<Result<GroupResult, SkippedGroup>> =
        parallel_map(groups.len(), workers, |i| {
            probe::evaluate_group(&groups[i], i, &lookup, pooling, model, spec)
        });
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(s) => skipped.push(s),
        }
    }
    let macro_accuracy = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.accuracy).sum::<f64>() / results.len() as f64
    };
    let descriptor_dim = groups
        .iter()
        .flat_map(|g| g.train.iter())
        .find_map(|(id, _)| cache.get(id))
        .map(|frames| match spec.kind {
            ProbeKind::Attentive => frames.cols(),
            _ => lift_core::pool::pool_descriptor(frames, pooling, model)
                .map(|d| d.numel())
                .unwrap_or(0),
        })
        .unwrap_or(0);
    Ok(ProbeReport {
        groups: results,
        skipped,
        macro_accuracy,
        descriptor_dim,
        pooling: pooling.label(),
        probe: spec.kind.label(),
    })
}

fn load_groups(path: &Path) -> Result<Vec<ChiralGroup>, CliError> {
    let text = fs::read_to_string(path)?;
    let mined: MinedGroups = serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(mined.groups)
}

fn probe_report_csv(report: &ProbeReport) -> String {
    let mut csv = String::from("group,n_train,n_test,accuracy\n");
    for g in &report.groups {
        csv.push_str(&format!("{},{},{},{}\n", g.name, g.n_train, g.n_test, g.accuracy));
    }
    csv
}

fn cmd_probe(args: ProbeArgs) -> Result<(), CliError> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let groups = load_groups(&args.groups)?;
    let pooling = parse_pooling(&args.pooling, args.t)?;
    let needs_model = matches!(pooling, PoolingSpec::LiftDescriptor);
    let ckpt = match (&args.checkpoint, needs_model) {
        (Some(path), _) => Some(checkpoint::load_checkpoint(path)?),
        (None, true) => {
            return Err(CliError::Validation(
                "--checkpoint is required for lift pooling".into(),
            ))
        }
        (None, false) => None,
    };
    let seq_len = ckpt
        .as_ref()
        .map(|c| c.params.config.seq_len)
        .unwrap_or(args.t);
    let mut spec = ProbeSpec::chiral(parse_probe_kind(&args.probe)?);
    spec.lr = args.lr;
    spec.epochs = args.epochs;
    spec.seed = args.seed;
    spec.standardize = args.standardize;
    spec.validate()?;
    let report = run_probe(
        &manifest,
        &groups,
        &pooling,
        ckpt.as_ref().map(|c| &c.params),
        &ckpt.as_ref().map(|c| c.meta.feature_stats.clone()).unwrap_or(None),
        &spec,
        seq_len,
        args.workers,
    )?;
    fs::write(&args.out, serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    if let Some(csv_path) = &args.csv {
        fs::write(csv_path, probe_report_csv(&report))?;
    }
    write_run_manifest(
        &run_manifest_path(&args.out, false),
        "probe",
        &args,
        args.seed,
        &[&args.manifest, &args.groups],
        &[&args.out],
    )?;
    eprintln!(
        "probe: {} groups ({} skipped), macro accuracy {:.4} [{} / {}]",
        report.groups.len(),
        report.skipped.len(),
        report.macro_accuracy,
        report.pooling,
        report.probe
    );
    Ok(())
}

fn cmd_tv(args: TvArgs) -> Result<(), CliError> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let mut csv = String::from("video_id,tv\n");
    let mut total = 0.0;
    for record in &manifest.records {
        let frames = manifest.load_frames(&record.video_id)?;
        let tv = stats::time_variance(&frames)?;
        total += tv;
        csv.push_str(&format!("{},{tv}\n", record.video_id));
    }
    fs::write(&args.out, csv)?;
    write_run_manifest(
        &run_manifest_path(&args.out, false),
        "tv",
        &args,
        0,
        &[&args.manifest],
        &[&args.out],
    )?;
    if !manifest.records.is_empty() {
        eprintln!(
            "tv: mean {:.6} over {} videos",
            total / manifest.records.len() as f64,
            manifest.records.len()
        );
    }
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> Result<(), CliError> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let ckpt = checkpoint::load_checkpoint(&args.checkpoint)?;
    let frames = manifest.load_frames(&args.video)?;
    let frames = apply_stats(
        &featureio::resample_frames(&frames, ckpt.params.config.seq_len),
        &ckpt.meta.feature_stats,
    );
    let (_, recon) = model::forward_reconstruct(&ckpt.params, &frames)?;
    let projection = stats::project_2d(&frames, &recon)?;
    if projection.rank_deficient {
        eprintln!("project: warning: trajectories span < 2 directions; pc2 zero-filled");
    }
    let mut csv = String::from("video_id,frame,pc1,pc2,kind\n");
    for p in &projection.points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            args.video,
            p.t,
            p.pc1,
            p.pc2,
            p.kind.as_str()
        ));
    }
    fs::write(&args.out, csv)?;
    write_run_manifest(
        &run_manifest_path(&args.out, false),
        "project",
        &args,
        ckpt.meta.seed,
        &[&args.manifest, &args.checkpoint],
        &[&args.out],
    )?;
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> Result<(), CliError> {
    let cfg = args.model.config(Some(384))?;
    println!("{}", model::count_params(&cfg));
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| CliError::Validation(format!("bad {what} value '{p}'")))
        })
        .collect()
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let groups = load_groups(&args.groups)?;
    let dims: Vec<usize> = parse_list(&args.dims, "latent dim")?;
    let fractions: Vec<f64> = parse_list(&args.fractions, "fraction")?;
    let data_dim = manifest
        .records
        .first()
        .map(|r| r.dim)
        .ok_or_else(|| CliError::Validation("empty manifest".into()))?;
    let mut csv = String::from("latent_dim,fraction,macro_accuracy\n");
    for &dim in &dims {
        for &fraction in &fractions {
            let cfg = LiftConfig {
                input_dim: data_dim,
                latent_dim: dim,
                layers: 4,
                heads: 8,
                ffn_mult: 4,
                seq_len: args.t,
                lambda_orth: 0.1,
            };
            cfg.validate()?;
            let train_cfg = TrainConfig {
                epochs: args.epochs,
                seed: args.seed,
                ..TrainConfig::default()
            };
            let (ckpt, _) = train_to_checkpoint(&manifest, &cfg, &train_cfg, fraction, false)?;
            let spec = ProbeSpec { seed: args.seed, ..ProbeSpec::default() };
            let report = run_probe(
                &manifest,
                &groups,
                &PoolingSpec::LiftDescriptor,
                Some(&ckpt.params),
                &ckpt.meta.feature_stats,
                &spec,
                args.t,
                1,
            )?;
            eprintln!(
                "ablate: d={dim} fraction={fraction} -> macro accuracy {:.4}",
                report.macro_accuracy
            );
            csv.push_str(&format!("{dim},{fraction},{}\n", report.macro_accuracy));
        }
    }
    fs::write(&args.out, csv)?;
    write_run_manifest(
        &run_manifest_path(&args.out, false),
        "ablate",
        &args,
        args.seed,
        &[&args.manifest, &args.groups],
        &[&args.out],
    )?;
    Ok(())
}
