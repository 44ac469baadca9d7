use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::nn::dense;
use crate::diffcore::{adam_step, Bound, Graph, OptimizerState, ParameterTree, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::posemb;
use crate::objectives::mse;

/// Spatial broadcast decoder: `layers` 1×1 layers of `width` channels, the
/// last one emitting RGB plus an alpha logit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub width: usize,
    pub layers: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { width: 16, layers: 3 }
    }
}

pub fn init_decoder<T: Real>(cfg: &DecoderConfig, slot_dim: usize, seed: u64) -> Result<ParameterTree<T>> {
    if cfg.layers == 0 || cfg.width == 0 {
        return Err(Error::Config {
            key: "decoder".into(),
            detail: "decoder needs at least one layer of nonzero width".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterTree::new();
    let mut fan_in = slot_dim + 2;
    for i in 0..cfg.layers {
        let out = if i + 1 == cfg.layers { 4 } else { cfg.width };
        p.init_dense(&format!("decoder.l{i}"), fan_in, out, true, &mut rng)?;
        fan_in = out;
    }
    Ok(p)
}

/// Graph handles for a decoded batch of slot sets with leading axes `L`.
#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput {
    /// `[L.., K, H·W, 3]`
    pub rgb: Var,
    /// `[L.., K, H·W]`
    pub alpha_logits: Var,
    /// Softmax of the logits over slots.
    pub alpha: Var,
    /// `[L.., H, W, 3]`
    pub composite: Var,
}

/// Decode each slot of `slots` (`[L.., K, D]`) independently over an
/// `height × width` grid and composite with slot-normalized alphas.
pub fn broadcast_decode<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &DecoderConfig,
    slots: Var,
    height: usize,
    width: usize,
) -> Result<DecoderOutput> {
    let shape = g.shape(slots).to_vec();
    if shape.len() < 2 {
        return Err(Error::dim(
            "broadcast_decode",
            format!("slots must be [.., K, D], got {shape:?}"),
        ));
    }
    let (k, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let w0 = p.get("decoder.l0.weight")?;
    if g.shape(w0)[0] != d + 2 {
        return Err(Error::dim(
            "broadcast_decode",
            format!("slot width {d} does not fit decoder input {}", g.shape(w0)[0]),
        ));
    }
    let lead = &shape[..shape.len() - 2];
    let m: usize = lead.iter().product();
    let px = height * width;

    let flat = g.reshape(slots, &[m, k, d])?;
    let tiled = g.repeat(flat, 2, px)?;
    let pos = g.constant(posemb::<T>(height, width));
    let pos = g.repeat(pos, 0, k)?;
    let pos = g.repeat(pos, 0, m)?;
    let mut x = g.concat(&[tiled, pos], 3)?;
    for i in 0..cfg.layers {
        if i > 0 {
            x = g.relu(x);
        }
        x = dense(g, p, &format!("decoder.l{i}"), x)?;
    }
    let rgb = g.slice(x, 3, 0, 3)?;
    let logits = g.slice(x, 3, 3, 4)?;
    let logits = g.reshape(logits, &[m, k, px])?;
    let alpha = g.softmax(logits, 1)?;
    let weighted = g.scale_rows(rgb, alpha)?;
    let composite = g.sum_axis(weighted, 1)?;

    let with = |tail: &[usize]| [lead, tail].concat();
    Ok(DecoderOutput {
        rgb: g.reshape(rgb, &with(&[k, px, 3]))?,
        alpha_logits: g.reshape(logits, &with(&[k, px]))?,
        alpha: g.reshape(alpha, &with(&[k, px]))?,
        composite: g.reshape(composite, &with(&[height, width, 3]))?,
    })
}

/// Probe losses measured before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeStep {
    pub mse_slots: f64,
    pub mse_preds: f64,
}

/// One Adam step of the decoder probe on stopped representations: slots
/// `[B, T, K, D]` decode to frames `[B, T, H, W, 3]` and predictions
/// `[B, T−2, K, D]` to frames `2..T`. Only `decoder` and `opt` change.
pub fn probe_train_step<T: Real>(
    decoder: &mut ParameterTree<T>,
    opt: &mut OptimizerState<T>,
    cfg: &DecoderConfig,
    slots: &Tensor<T>,
    preds: &Tensor<T>,
    frames: &Tensor<T>,
) -> Result<ProbeStep> {
    let fs = frames.shape();
    if fs.len() != 5 || fs[1] < 3 {
        return Err(Error::dim("probe_train_step", format!("frames {fs:?}")));
    }
    let (t, h, w) = (fs[1], fs[2], fs[3]);
    let mut g = Graph::new();
    let p = decoder.bind(&mut g);
    let x = g.constant(frames.clone());
    let s = g.constant(slots.clone());
    let pr = g.constant(preds.clone());
    let ds = broadcast_decode(&mut g, &p, cfg, s, h, w)?;
    let dp = broadcast_decode(&mut g, &p, cfg, pr, h, w)?;
    let target_p = g.slice(x, 1, 2, t)?;
    let ms = mse(&mut g, ds.composite, x)?;
    let mp = mse(&mut g, dp.composite, target_p)?;
    let loss = g.add(ms, mp)?;
    let grads = g.backward(loss)?;
    let grads = decoder.gradients(&p, &grads)?;
    let step = ProbeStep {
        mse_slots: g.value(ms).item().as_f64(),
        mse_preds: g.value(mp).item().as_f64(),
    };
    adam_step(decoder, &grads, opt)?;
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::AdamConfig;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn decode(p: &ParameterTree<f64>, slots: &Tensor<f64>) -> (Graph<f64>, DecoderOutput) {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let s = g.constant(slots.clone());
        let out = broadcast_decode(&mut g, &b, &DecoderConfig::default(), s, 5, 5).unwrap();
        (g, out)
    }

    #[test]
    fn output_shapes() {
        let p = init_decoder::<f64>(&DecoderConfig::default(), 16, 0).unwrap();
        let (g, out) = decode(&p, &random(&[4, 16], 1));
        assert_eq!(g.shape(out.rgb), &[4, 25, 3]);
        assert_eq!(g.shape(out.alpha_logits), &[4, 25]);
        assert_eq!(g.shape(out.composite), &[5, 5, 3]);
        let alpha = g.value(out.alpha).data();
        for px in 0..25 {
            let s: f64 = (0..4).map(|k| alpha[k * 25 + px]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_and_equal_alphas() {
        let mut p = init_decoder::<f64>(&DecoderConfig::default(), 16, 2).unwrap();
        // Equal logits: zero the alpha column of the last layer.
        let w = p.get_mut("decoder.l2.weight").unwrap();
        for r in 0..16 {
            w.data_mut()[r * 4 + 3] = 0.0;
        }
        let (g, out) = decode(&p, &random(&[4, 16], 3));
        let rgb = g.value(out.rgb).data();
        let comp = g.value(out.composite).data();
        for px in 0..25 {
            for c in 0..3 {
                let mean = (0..4).map(|k| rgb[(k * 25 + px) * 3 + c]).sum::<f64>() / 4.0;
                assert!((comp[px * 3 + c] - mean).abs() < 1e-12);
            }
        }

        // Saturated: a first-layer input channel read only by slot 0.
        let base = random(&[16], 4);
        let slots = Tensor::from_fn(&[4, 16], |i| match (i / 16, i % 16) {
            (0, 0) => 1.0,
            (_, 0) => 0.0,
            (_, c) => base.data()[c],
        });
        let w0 = p.get_mut("decoder.l0.weight").unwrap();
        for c in 0..16 {
            w0.data_mut()[c] = 0.0;
        }
        w0.data_mut()[0] = 100.0;
        let w2 = p.get_mut("decoder.l2.weight").unwrap();
        w2.data_mut()[3] = 1000.0;
        let w1 = p.get_mut("decoder.l1.weight").unwrap();
        for c in 0..16 {
            w1.data_mut()[c] = 0.0;
        }
        w1.data_mut()[0] = 1.0;
        let (g, out) = decode(&p, &slots);
        let rgb = g.value(out.rgb).data();
        let comp = g.value(out.composite).data();
        let logits = g.value(out.alpha_logits).data();
        for px in 0..25 {
            assert!((1..4).all(|k| logits[px] > logits[k * 25 + px] + 1000.0));
            for c in 0..3 {
                assert!((comp[px * 3 + c] - rgb[px * 3 + c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let p = init_decoder::<f64>(&DecoderConfig::default(), 16, 0).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let s = g.constant(random(&[4, 8], 1));
        assert!(matches!(
            broadcast_decode(&mut g, &b, &DecoderConfig::default(), s, 5, 5),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_lr_probe_step_reports_but_keeps_parameters() {
        let cfg = DecoderConfig::default();
        let mut p = init_decoder::<f64>(&cfg, 16, 0).unwrap();
        let before = p.clone();
        let mut opt = OptimizerState::new(
            &p,
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
        );
        let step = probe_train_step(
            &mut p,
            &mut opt,
            &cfg,
            &random(&[1, 3, 4, 16], 1),
            &random(&[1, 1, 4, 16], 2),
            &random(&[1, 3, 5, 5, 3], 3),
        )
        .unwrap();
        assert!(p.bit_identical(&before));
        assert!(step.mse_slots > 0.0 && step.mse_preds > 0.0);
    }
}
