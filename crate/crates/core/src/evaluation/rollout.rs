use crate::datasets::VideoSequence;
use crate::diffcore::{Graph, ParameterTree, Real, Tensor};
use crate::error::{Error, Result};
use crate::evaluation::{broadcast_decode, mse, DecoderConfig};
use crate::model::{batch_frames, encode_frames, transition, ModelConfig};

/// Longest supported prediction horizon.
pub const MAX_ROLLOUT: usize = 5;

/// Iterate the transition model `steps` times from the slot pair
/// `(older, newer)` (`[.., K, D]` each) without encoding new frames. Each
/// prediction replaces the older element of the pair.
pub fn rollout<T: Real>(
    params: &ParameterTree<T>,
    older: &Tensor<T>,
    newer: &Tensor<T>,
    steps: usize,
) -> Result<Vec<Tensor<T>>> {
    if steps == 0 || steps > MAX_ROLLOUT {
        return Err(Error::Argument(format!(
            "rollout horizon must be in 1..={MAX_ROLLOUT}, got {steps}"
        )));
    }
    let mut pair = (older.clone(), newer.clone());
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut g = Graph::new();
        let p = params.bind_constant(&mut g);
        let a = g.constant(pair.0);
        let b = g.constant(pair.1.clone());
        let next = transition(&mut g, &p, a, b)?;
        let next = g.value(next).clone();
        out.push(next.clone());
        pair = (pair.1, next);
    }
    Ok(out)
}

/// Encode frames 0 and 1 of every sequence, roll out `steps` predictions and
/// return each step's decoded MSE against frames `2..2 + steps`, averaged
/// over sequences.
pub fn rollout_mse<T: Real>(
    params: &ParameterTree<T>,
    cfg: &ModelConfig,
    decoder: &ParameterTree<T>,
    dec_cfg: &DecoderConfig,
    sequences: &[&VideoSequence],
    steps: usize,
    noise_seed: u64,
) -> Result<Vec<f64>> {
    let frames = batch_frames::<T>(sequences)?;
    let s = frames.shape().to_vec();
    let (b, t, h, w) = (s[0], s[1], s[2], s[3]);
    if t < steps + 2 {
        return Err(Error::Argument(format!(
            "{t} frames cannot score a {steps}-step rollout"
        )));
    }
    let mut g = Graph::new();
    let p = params.bind_constant(&mut g);
    let x = g.constant(frames.clone());
    let ctx = g.slice(x, 1, 0, 2)?;
    let ctx = g.reshape(ctx, &[b * 2, h, w, 3])?;
    let (slots, _) = encode_frames(&mut g, &p, cfg, ctx, noise_seed)?;
    let slots = g.reshape(slots, &[b, 2, cfg.num_slots, cfg.slot_dim])?;
    let s0 = g.slice(slots, 1, 0, 1)?;
    let s1 = g.slice(slots, 1, 1, 2)?;
    let (s0, s1) = (g.value(s0).clone(), g.value(s1).clone());

    let preds = rollout(params, &s0, &s1, steps)?;
    let mut scores = Vec::with_capacity(steps);
    for (i, pred) in preds.into_iter().enumerate() {
        let mut g = Graph::new();
        let dp = decoder.bind_constant(&mut g);
        let pv = g.constant(pred);
        let dec = broadcast_decode(&mut g, &dp, dec_cfg, pv, h, w)?;
        let target = frames.index_axis(1, 2 + i)?;
        let recon = g.value(dec.composite).clone().reshape(target.shape())?;
        scores.push(mse(&recon, &target)?);
    }
    Ok(scores)
}
