use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::nn::{dense, gru_cell, layer_norm, mlp};
use crate::diffcore::{Bound, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SlotInit};

/// Constant position ramp `[H·W, 2]`: channel 0 runs 0→1 down the rows,
/// channel 1 runs 0→1 across the columns.
pub fn posemb<T: Real>(height: usize, width: usize) -> Tensor<T> {
    let ramp = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    Tensor::from_fn(&[height * width, 2], |i| {
        let (px, ch) = (i / 2, i % 2);
        T::lit(if ch == 0 {
            ramp(px / width, height)
        } else {
            ramp(px % width, width)
        })
    })
}

/// Frames `[F, H, W, 3]` → features `[F, H·W, enc_dim]`.
///
/// `h¹ = mlp₁(x) + linear(posemb)`, `h = mlp₂(LN(h¹))`.
pub fn encode_backbone<T: Real>(g: &mut Graph<T>, p: &Bound, frames: Var) -> Result<Var> {
    let s = g.shape(frames).to_vec();
    if s.len() != 4 || s[3] != 3 {
        return Err(Error::dim(
            "encode_backbone",
            format!("frames must be [F, H, W, 3], got {s:?}"),
        ));
    }
    let (f, h, w) = (s[0], s[1], s[2]);
    let x = g.reshape(frames, &[f, h * w, 3])?;
    let h1 = mlp(g, p, "backbone.mlp1", x)?;
    let pos = g.constant(posemb(h, w));
    let pos = dense(g, p, "backbone.pos", pos)?;
    let pos = g.repeat(pos, 0, f)?;
    let h1 = g.add(h1, pos)?;
    let h1 = layer_norm(g, p, "backbone.norm", h1)?;
    mlp(g, p, "backbone.mlp2", h1)
}

/// Initial slots `[F, K, D]` for `F` frames.
pub fn slot_init<T: Real>(g: &mut Graph<T>, p: &Bound, cfg: &ModelConfig, frames: usize, seed: u64) -> Result<Var> {
    let (k, d) = (cfg.num_slots, cfg.slot_dim);
    if k == 0 {
        return Err(Error::Argument("slot attention needs at least one slot".into()));
    }
    match cfg.slot_init {
        SlotInit::Learned => {
            let c = p.get("slots.init")?;
            if g.shape(c) != [k, d] {
                return Err(Error::dim(
                    "slot_init",
                    format!("slots.init is {:?}, expected [{k}, {d}]", g.shape(c)),
                ));
            }
            g.repeat(c, 0, frames)
        }
        SlotInit::Random => {
            let mu = p.get("slots.mu")?;
            let sigma = p.get("slots.sigma")?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps = Tensor::from_fn(&[frames, k, d], |_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                T::lit(e)
            });
            let eps = g.constant(eps);
            let sigma = g.repeat(sigma, 0, k)?;
            let sigma = g.repeat(sigma, 0, frames)?;
            let noise = g.mul(eps, sigma)?;
            let mu = g.repeat(mu, 0, k)?;
            let mu = g.repeat(mu, 0, frames)?;
            g.add(mu, noise)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SlotAttentionOutput {
    /// `[F, K, D]`
    pub slots: Var,
    /// Last iteration's attention `[F, N, K]`, normalized over slots.
    pub attention: Var,
    /// Last iteration's weighted-mean readout `[F, K, D]`.
    pub readout: Var,
}

/// Slots compete for pixels through a softmax over the slot axis; each slot
/// then reads the weighted mean of the values it won and is updated by a GRU
/// followed by a residual MLP.
pub fn slot_attention<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    features: Var,
    init: Var,
    iterations: usize,
) -> Result<SlotAttentionOutput> {
    if iterations == 0 {
        return Err(Error::Argument("slot attention needs at least one iteration".into()));
    }
    let k_slots = g.shape(init).get(1).copied().unwrap_or(0);
    if k_slots == 0 {
        return Err(Error::Argument("slot attention needs at least one slot".into()));
    }
    let d = *g.shape(init).last().unwrap();
    let inputs = layer_norm(g, p, "slots.norm_input", features)?;
    let keys = dense(g, p, "slots.key", inputs)?;
    let values = dense(g, p, "slots.value", inputs)?;
    let scale = T::lit(1.0 / (d as f64).sqrt());

    let mut slots = init;
    let mut attention = None;
    let mut readout = None;
    for _ in 0..iterations {
        let prev = slots;
        let normed = layer_norm(g, p, "slots.norm_slots", slots)?;
        let q = dense(g, p, "slots.query", normed)?;
        let logits = g.bmm(keys, q, false, true)?;
        let logits = g.scale(logits, scale);
        let a = g.softmax(logits, 2)?;
        let w = g.normalize(a, 1, 1e-8)?;
        let u = g.bmm(w, values, true, false)?;
        let s = gru_cell(g, p, "slots.gru", prev, u)?;
        let r = layer_norm(g, p, "slots.norm_mlp", s)?;
        let r = mlp(g, p, "slots.mlp", r)?;
        slots = g.add(s, r)?;
        attention = Some(a);
        readout = Some(u);
    }
    Ok(SlotAttentionOutput {
        slots,
        attention: attention.unwrap(),
        readout: readout.unwrap(),
    })
}

/// FeatureMap-MLP slots: a per-pixel linear map to K channels, channel k
/// over all pixels forms slot k's raw vector, then a shared MLP to D.
pub fn fm_mlp_slots<T: Real>(g: &mut Graph<T>, p: &Bound, cfg: &ModelConfig, features: Var) -> Result<Var> {
    let s = g.shape(features).to_vec();
    let n = s[1];
    let w0 = p.get("fm.mlp.l0.weight")?;
    if g.shape(w0)[0] != n {
        return Err(Error::dim(
            "fm_mlp_slots",
            format!("{n} pixels per frame but the slot MLP expects {}", g.shape(w0)[0]),
        ));
    }
    let maps = dense(g, p, "fm.linear", features)?;
    if g.shape(maps)[2] != cfg.num_slots {
        return Err(Error::dim("fm_mlp_slots", "fm.linear width differs from num_slots"));
    }
    let raw = g.permute(maps, &[0, 2, 1])?;
    mlp(g, p, "fm.mlp", raw)
}

/// Residual per-slot prediction `p = s₁ + f([s₀, s₁, s₁ − s₀])` with
/// `f = up ∘ LN ∘ down`; works over any leading axes.
pub fn transition<T: Real>(g: &mut Graph<T>, p: &Bound, s0: Var, s1: Var) -> Result<Var> {
    if g.shape(s0) != g.shape(s1) {
        return Err(Error::dim(
            "transition",
            format!("slot sets {:?} and {:?} differ", g.shape(s0), g.shape(s1)),
        ));
    }
    let last = g.shape(s0).len() - 1;
    let diff = g.sub(s1, s0)?;
    let x = g.concat(&[s0, s1, diff], last)?;
    let x = dense(g, p, "transition.down", x)?;
    let x = layer_norm(g, p, "transition.norm", x)?;
    let x = dense(g, p, "transition.up", x)?;
    g.add(s1, x)
}

/// DeepSets embedding `z = mlp_outer(LN(Σ_k mlp_inner(s_k)))` of slot sets
/// `[..., K, D]` → `[..., D]`.
pub fn set_encode<T: Real>(g: &mut Graph<T>, p: &Bound, slots: Var) -> Result<Var> {
    let rank = g.shape(slots).len();
    if rank < 2 {
        return Err(Error::dim("set_encode", "slot sets must be at least [K, D]"));
    }
    let e = mlp(g, p, "set.inner", slots)?;
    let pooled = g.sum_axis(e, rank - 2)?;
    let pooled = layer_norm(g, p, "set.norm", pooled)?;
    mlp(g, p, "set.outer", pooled)
}
