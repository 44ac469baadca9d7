//! Fit the spatial broadcast decoder probe to frozen features and check the
//! model parameters stay untouched.
//!
//! cargo run --release --example decoder_probe

use setcon::datasets::{gridworld_sequence, GridWorldConfig};
use setcon::diffcore::{AdamConfig, Graph, OptimizerState};
use setcon::evaluation::{init_decoder, probe_train_step, DecoderConfig};
use setcon::model::{batch_frames, forward_sequence, init_params, ModelConfig};

fn main() -> setcon::Result<()> {
    let cfg = ModelConfig::default();
    let dec_cfg = DecoderConfig::default();
    let params = init_params::<f32>(&cfg, 5, 5, 1)?;
    let before = params.clone();
    let mut decoder = init_decoder::<f32>(&dec_cfg, cfg.slot_dim, 2)?;
    let mut opt = OptimizerState::new(
        &decoder,
        AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
    );

    for step in 0..200u64 {
        let seqs = (0..16)
            .map(|b| gridworld_sequence(step * 16 + b, &GridWorldConfig::default()))
            .collect::<setcon::Result<Vec<_>>>()?;
        let refs: Vec<_> = seqs.iter().collect();
        let frames = batch_frames::<f32>(&refs)?;
        let mut g = Graph::new();
        let p = params.bind_constant(&mut g);
        let x = g.constant(frames.clone());
        let out = forward_sequence(&mut g, &p, &cfg, x, step)?;
        let (s, pr) = (g.value(out.slots).clone(), g.value(out.preds).clone());
        let probe = probe_train_step(&mut decoder, &mut opt, &dec_cfg, &s, &pr, &frames)?;
        if step % 40 == 0 || step == 199 {
            println!(
                "step {step:>3}: mse(s_t) {:.4}  mse(p_t) {:.4}",
                probe.mse_slots, probe.mse_preds
            );
        }
    }
    println!("model parameters unchanged: {}", params.bit_identical(&before));
    Ok(())
}
