//! One forward pass of the slot model over a GridWorld batch: slot, prediction
//! and set-embedding shapes, plus how the first frame's pixels split across
//! slots under the (untrained) attention.
//!
//! cargo run --release --example slot_model

use setcon::datasets::{gridworld_sequence, GridWorldConfig};
use setcon::diffcore::Graph;
use setcon::model::{batch_frames, forward_sequence, init_params, ModelConfig};

fn main() -> setcon::Result<()> {
    let cfg = ModelConfig::default();
    let seqs = (0..4)
        .map(|s| gridworld_sequence(s, &GridWorldConfig::default()))
        .collect::<setcon::Result<Vec<_>>>()?;
    let refs: Vec<_> = seqs.iter().collect();
    let frames = batch_frames::<f32>(&refs)?;
    let params = init_params::<f32>(&cfg, 5, 5, 0)?;
    println!("{} parameter tensors, {} scalars", params.len(), params.num_scalars());

    let mut g = Graph::new();
    let p = params.bind_constant(&mut g);
    let x = g.constant(frames);
    let out = forward_sequence(&mut g, &p, &cfg, x, 0)?;
    println!("slots  {:?}", g.shape(out.slots));
    println!("preds  {:?}", g.shape(out.preds));
    println!("z_s    {:?}", g.shape(out.zs));
    println!("z_p    {:?}", g.shape(out.zp));

    let attn = out.attention.expect("slot attention encoder");
    let a = g.value(attn).data();
    let k = cfg.num_slots;
    let mut share = vec![0.0f32; k];
    for px in 0..25 {
        for (s, v) in share.iter_mut().enumerate() {
            *v += a[px * k + s] / 25.0;
        }
    }
    println!("attention mass per slot, frame 0: {share:.3?}");
    Ok(())
}
