//! Slot-based video model: convolutional-style backbone, Slot Attention or
//! FM-MLP slot extraction, a per-slot transition predictor and a DeepSets
//! encoder that embeds whole slot sets.
//!
//! All per-pixel layers are 1×1 kernels and therefore dense layers over the
//! channel axis. Every function works on batched graph values: frames are
//! `[B, T, H, W, 3]`, slot sets `[..., K, D]`.

mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::VideoSequence;
use crate::diffcore::{Bound, Graph, ParameterTree, Real, Role, Tensor, Var};
use crate::error::{Error, Result};

pub use layers::{
    encode_backbone, fm_mlp_slots, posemb, set_encode, slot_attention, slot_init, transition, SlotAttentionOutput,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    SlotAttention,
    FmMlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotInit {
    /// One learned initialization row per slot.
    Learned,
    /// `c = μ + ε ⊙ σ` with `μ`, `σ` shared across slots and fresh noise.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: Encoder,
    pub num_slots: usize,
    pub slot_dim: usize,
    pub enc_dim: usize,
    pub hidden: usize,
    pub slot_init: SlotInit,
    pub attention_iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: Encoder::SlotAttention,
            num_slots: 4,
            slot_dim: 16,
            enc_dim: 32,
            hidden: 128,
            slot_init: SlotInit::Learned,
            attention_iterations: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_slots", self.num_slots),
            ("slot_dim", self.slot_dim),
            ("enc_dim", self.enc_dim),
            ("hidden", self.hidden),
            ("attention_iterations", self.attention_iterations),
        ];
        for (key, v) in fields {
            if v == 0 {
                return Err(Error::Config {
                    key: format!("model.{key}"),
                    detail: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }
}

/// Fresh model parameters for frames of `height × width` pixels.
pub fn init_params<T: Real>(cfg: &ModelConfig, height: usize, width: usize, seed: u64) -> Result<ParameterTree<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e, d, k, hid) = (cfg.enc_dim, cfg.slot_dim, cfg.num_slots, cfg.hidden);
    let mut p = ParameterTree::new();

    p.init_mlp("backbone.mlp1", 3, e, e, &mut rng)?;
    p.init_dense("backbone.pos", 2, e, true, &mut rng)?;
    p.init_layer_norm("backbone.norm", e)?;
    p.init_mlp("backbone.mlp2", e, e, e, &mut rng)?;

    match cfg.encoder {
        Encoder::SlotAttention => {
            p.init_layer_norm("slots.norm_input", e)?;
            p.init_dense("slots.key", e, d, false, &mut rng)?;
            p.init_dense("slots.value", e, d, false, &mut rng)?;
            p.init_layer_norm("slots.norm_slots", d)?;
            p.init_dense("slots.query", d, d, false, &mut rng)?;
            p.init_gru("slots.gru", d, d, &mut rng)?;
            p.init_layer_norm("slots.norm_mlp", d)?;
            p.init_mlp("slots.mlp", d, hid, d, &mut rng)?;
            match cfg.slot_init {
                SlotInit::Learned => p.init_slots("slots.init", k, d, &mut rng)?,
                SlotInit::Random => {
                    p.init_slots("slots.mu", 1, d, &mut rng)?;
                    let mu = p.get("slots.mu")?.clone().reshape(&[d])?;
                    *p.get_mut("slots.mu")? = mu;
                    let sigma = T::lit(1.0 / (d as f64).sqrt());
                    p.insert("slots.sigma", Role::SlotInit, Tensor::full(&[d], sigma))?;
                }
            }
        }
        Encoder::FmMlp => {
            p.init_dense("fm.linear", e, k, true, &mut rng)?;
            p.init_mlp("fm.mlp", height * width, hid, d, &mut rng)?;
        }
    }

    p.init_dense("transition.down", 3 * d, hid, true, &mut rng)?;
    p.init_layer_norm("transition.norm", hid)?;
    p.init_dense("transition.up", hid, d, true, &mut rng)?;

    p.init_mlp("set.inner", d, hid, d, &mut rng)?;
    p.init_layer_norm("set.norm", d)?;
    p.init_mlp("set.outer", d, hid, d, &mut rng)?;
    Ok(p)
}

/// Graph handles for one forward pass over a batch of sequences.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[B, T, K, D]`
    pub slots: Var,
    /// `[B, T−2, K, D]`; entry `t` predicts `slots[:, t + 2]`.
    pub preds: Var,
    /// `[B, T, N, K]`, absent for FM-MLP.
    pub attention: Option<Var>,
    /// `[B, T, D]`
    pub zs: Var,
    /// `[B, T−2, D]`
    pub zp: Var,
}

/// Per-frame slots (and attention) for frames `[F, H, W, 3]`.
pub fn encode_frames<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    frames: Var,
    noise_seed: u64,
) -> Result<(Var, Option<Var>)> {
    let h = encode_backbone(g, p, frames)?;
    match cfg.encoder {
        Encoder::SlotAttention => {
            let f = g.shape(h)[0];
            let init = slot_init(g, p, cfg, f, noise_seed)?;
            let out = slot_attention(g, p, h, init, cfg.attention_iterations)?;
            Ok((out.slots, Some(out.attention)))
        }
        Encoder::FmMlp => Ok((fm_mlp_slots(g, p, cfg, h)?, None)),
    }
}

/// Full model on frames `[B, T, H, W, 3]` with `T ≥ 3`.
pub fn forward_sequence<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    frames: Var,
    noise_seed: u64,
) -> Result<ForwardOutput> {
    let shape = g.shape(frames).to_vec();
    if shape.len() != 5 {
        return Err(Error::dim(
            "forward_sequence",
            format!("frames must be [B, T, H, W, 3], got {shape:?}"),
        ));
    }
    let (b, t, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if t < 3 {
        return Err(Error::Argument(format!(
            "sequences need at least 3 frames to form a prediction target, got {t}"
        )));
    }
    let flat = g.reshape(frames, &[b * t, h, w, shape[4]])?;
    let (slots, attn) = encode_frames(g, p, cfg, flat, noise_seed)?;
    let (k, d) = (cfg.num_slots, cfg.slot_dim);
    let slots = g.reshape(slots, &[b, t, k, d])?;
    let attention = match attn {
        Some(a) => Some(g.reshape(a, &[b, t, h * w, k])?),
        None => None,
    };
    let prev = g.slice(slots, 1, 0, t - 2)?;
    let cur = g.slice(slots, 1, 1, t - 1)?;
    let preds = transition(g, p, prev, cur)?;
    let zs = set_encode(g, p, slots)?;
    let zp = set_encode(g, p, preds)?;
    Ok(ForwardOutput {
        slots,
        preds,
        attention,
        zs,
        zp,
    })
}

/// Frames `[B, T, H, W, 3]` from a batch of sequences.
pub fn batch_frames<T: Real>(batch: &[&VideoSequence]) -> Result<Tensor<T>> {
    let parts: Vec<Tensor<T>> = batch.iter().map(|s| s.frames.cast()).collect();
    Tensor::stack(&parts)
}
