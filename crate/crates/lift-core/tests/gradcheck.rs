//! Whole-model derivative verification in 64-bit mode.
//!
//! Analytic gradients of the full autoencoder loss are compared against
//! central finite differences over every parameter and the input frames.

use lift_core::model::{self, LiftConfig, LiftParams, ModelVars};
use lift_core::tape::{grad_check_multi, Tape};
use lift_core::tensor::Tensor;
use lift_core::train::lift_loss_on_tape;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_config() -> LiftConfig {
    LiftConfig {
        input_dim: 12,
        latent_dim: 8,
        layers: 2,
        heads: 2,
        ffn_mult: 2,
        seq_len: 4,
        lambda_orth: 0.1,
    }
}

fn rand_frames(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(vec![rows, cols], data).unwrap()
}

#[test]
fn full_lift_loss_gradient_matches_finite_differences() {
    let cfg = toy_config();
    let params = LiftParams::init(&cfg, 17).unwrap();
    let names: Vec<String> = params
        .tensors()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();

    // Inputs: two toy videos followed by every parameter tensor, in f64.
    let mut inputs: Vec<Tensor<f64>> = vec![
        rand_frames(cfg.seq_len, cfg.input_dim, 100),
        rand_frames(cfg.seq_len, cfg.input_dim, 101),
    ];
    inputs.extend(params.tensors().iter().map(|(_, t)| t.cast::<f64>()));

    let cfg2 = cfg.clone();
    let err = grad_check_multi(
        move |tape: &mut Tape<f64>, vars| {
            // vars[0..2] are the videos, vars[2..] the parameters.
            let mvars = ModelVars::from_vars(&names, &vars[2..]);
            let mut total = None;
            for &frames in &vars[..2] {
                let (z_s, z_d, recon) =
                    model::reconstruct_on_tape(tape, &cfg2, &mvars, frames)
                        .map_err(unwrap_tensor_err)?;
                let (loss, _, _) =
                    lift_loss_on_tape(tape, frames, recon, z_s, z_d, cfg2.lambda_orth as f64)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            Ok(total.unwrap())
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "full-model gradient relative error {err}");
}

fn unwrap_tensor_err(e: lift_core::model::ModelError) -> lift_core::tensor::TensorError {
    match e {
        lift_core::model::ModelError::Tensor(t) => t,
        other => panic!("unexpected model error: {other}"),
    }
}

#[test]
fn encode_is_independent_across_videos() {
    let cfg = toy_config();
    let params = LiftParams::init(&cfg, 3).unwrap();
    let a = rand_frames(cfg.seq_len, cfg.input_dim, 7).cast::<f32>();
    let b = rand_frames(cfg.seq_len, cfg.input_dim, 8).cast::<f32>();
    let da1 = model::encode(&params, &a).unwrap();
    let _db = model::encode(&params, &b).unwrap();
    let da2 = model::encode(&params, &a).unwrap();
    assert_eq!(da1, da2);
}
