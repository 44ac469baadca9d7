//! Training objectives: the set-level contrastive loss, its slotwise
//! counterpart and the reconstruction reference.
//!
//! Both contrastive losses use predictions `p_t` (t = 2..T−1) as anchors and
//! the encoded `s_t` at the same index as positives. The denominator runs
//! over every `s` and `p` embedding in the batch.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Bound, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::evaluation::{broadcast_decode, DecoderConfig};
use crate::model::ForwardOutput;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Every embedding in the batch, the positive and the anchor itself included.
    #[default]
    Literal,
    /// As `Literal` but without the anchor's similarity to itself.
    ExcludeSelf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub tau: f64,
    #[serde(default)]
    pub denominator: Denominator,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.5,
            denominator: Denominator::Literal,
        }
    }
}

const MASKED: f64 = -1e30;

/// InfoNCE over `G` independent groups. `anchors`, `positives`: `[G, A, D]`;
/// `candidates`: `[G, M, D]`, where candidate `self_offset + a` is anchor `a`.
fn grouped_infonce<T: Real>(
    g: &mut Graph<T>,
    anchors: Var,
    positives: Var,
    candidates: Var,
    self_offset: usize,
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    if !(cfg.tau > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {}",
            cfg.tau
        )));
    }
    let inv_tau = T::lit(1.0 / cfg.tau);
    let sims = g.bmm(anchors, candidates, false, true)?;
    let sims = g.scale(sims, inv_tau);
    let sims = match cfg.denominator {
        Denominator::Literal => sims,
        Denominator::ExcludeSelf => {
            let s = g.shape(sims).to_vec();
            let (a, m) = (s[1], s[2]);
            let mask = Tensor::from_fn(&s, |i| {
                let (row, col) = ((i / m) % a, i % m);
                if col == self_offset + row {
                    T::lit(MASKED)
                } else {
                    T::zero()
                }
            });
            let mask = g.constant(mask);
            g.add(sims, mask)?
        }
    };
    let lse = g.logsumexp(sims, 2)?;
    let pos = g.mul(anchors, positives)?;
    let pos = g.sum_axis(pos, 2)?;
    let pos = g.scale(pos, inv_tau);
    let per_anchor = g.sub(lse, pos)?;
    Ok(g.mean(per_anchor))
}

fn check_pair<T: Real>(g: &Graph<T>, s: Var, p: Var, rank: usize, op: &'static str) -> Result<(usize, usize)> {
    let ss = g.shape(s);
    let ps = g.shape(p);
    if ss.len() != rank || ps.len() != rank {
        return Err(Error::dim(op, format!("expected rank {rank}, got {ss:?} and {ps:?}")));
    }
    let (b, t) = (ss[0], ss[1]);
    if t < 3 || ps[0] != b || ps[1] != t - 2 || ss[2..] != ps[2..] {
        return Err(Error::dim(
            op,
            format!("encodings {ss:?} and predictions {ps:?} are not aligned"),
        ));
    }
    Ok((b, t))
}

/// Set contrastive loss on set embeddings `zs` `[B, T, D]` and `zp` `[B, T−2, D]`.
pub fn setcon_loss<T: Real>(g: &mut Graph<T>, zs: Var, zp: Var, cfg: &ContrastiveConfig) -> Result<Var> {
    let (b, t) = check_pair(g, zs, zp, 3, "setcon_loss")?;
    let d = g.shape(zs)[2];
    let a = b * (t - 2);
    let anchors = g.reshape(zp, &[1, a, d])?;
    let positives = g.slice(zs, 1, 2, t)?;
    let positives = g.reshape(positives, &[1, a, d])?;
    let all_s = g.reshape(zs, &[1, b * t, d])?;
    let candidates = g.concat(&[all_s, anchors], 1)?;
    grouped_infonce(g, anchors, positives, candidates, b * t, cfg)
}

/// Slotwise contrastive loss on slots `s` `[B, T, K, D]` and predictions
/// `p` `[B, T−2, K, D]`: slot index k is contrasted only against slot index
/// k of every set in the batch.
pub fn slotwise_loss<T: Real>(g: &mut Graph<T>, s: Var, p: Var, cfg: &ContrastiveConfig) -> Result<Var> {
    let (b, t) = check_pair(g, s, p, 4, "slotwise_loss")?;
    let (k, d) = (g.shape(s)[2], g.shape(s)[3]);
    let a = b * (t - 2);
    let per_slot = |g: &mut Graph<T>, x: Var, rows: usize| -> Result<Var> {
        let x = g.permute(x, &[2, 0, 1, 3])?;
        g.reshape(x, &[k, rows, d])
    };
    let anchors = per_slot(g, p, a)?;
    let positives = g.slice(s, 1, 2, t)?;
    let positives = per_slot(g, positives, a)?;
    let all_s = per_slot(g, s, b * t)?;
    let candidates = g.concat(&[all_s, anchors], 1)?;
    grouped_infonce(g, anchors, positives, candidates, b * t, cfg)
}

/// Mean of `(a − b)²` over all elements.
pub fn mse<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::dim("mse", format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    let d = g.sub(a, b)?;
    let d = g.square(d);
    Ok(g.mean(d))
}

/// Reconstruction terms for both heads:
/// `mse(decode(s_t), x_t) + mse(decode(p_t), x_t)`.
pub fn reconstruction_terms<T: Real>(
    g: &mut Graph<T>,
    decoder: &Bound,
    dec: &DecoderConfig,
    out: &ForwardOutput,
    frames: Var,
) -> Result<(Var, Var)> {
    let shape = g.shape(frames).to_vec();
    if shape.len() != 5 {
        return Err(Error::dim("reconstruction_loss", format!("frames {shape:?}")));
    }
    let (t, h, w) = (shape[1], shape[2], shape[3]);
    let rs = broadcast_decode(g, decoder, dec, out.slots, h, w)?;
    let rp = broadcast_decode(g, decoder, dec, out.preds, h, w)?;
    let target_p = g.slice(frames, 1, 2, t)?;
    let ms = mse(g, rs.composite, frames)?;
    let mp = mse(g, rp.composite, target_p)?;
    Ok((ms, mp))
}

/// The reconstruction reference objective; gradients reach every module.
pub fn reconstruction_loss<T: Real>(
    g: &mut Graph<T>,
    decoder: &Bound,
    dec: &DecoderConfig,
    out: &ForwardOutput,
    frames: Var,
) -> Result<Var> {
    let (ms, mp) = reconstruction_terms(g, decoder, dec, out, frames)?;
    g.add(ms, mp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn eval_setcon(zs: &Tensor<f64>, zp: &Tensor<f64>, cfg: &ContrastiveConfig) -> Result<f64> {
        let mut g = Graph::new();
        let a = g.constant(zs.clone());
        let b = g.constant(zp.clone());
        let l = setcon_loss(&mut g, a, b, cfg)?;
        Ok(g.value(l).item())
    }

    fn eval_slotwise(s: &Tensor<f64>, p: &Tensor<f64>, cfg: &ContrastiveConfig) -> f64 {
        let mut g = Graph::new();
        let a = g.constant(s.clone());
        let b = g.constant(p.clone());
        let l = slotwise_loss(&mut g, a, b, cfg).unwrap();
        g.value(l).item()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Direct summation over every anchor and every candidate.
    fn brute_setcon(zs: &Tensor<f64>, zp: &Tensor<f64>, tau: f64, exclude_self: bool) -> f64 {
        let (b, t, d) = (zs.shape()[0], zs.shape()[1], zs.shape()[2]);
        let s = |i: usize, j: usize| &zs.data()[(i * t + j) * d..(i * t + j + 1) * d];
        let p = |i: usize, j: usize| &zp.data()[(i * (t - 2) + j - 2) * d..(i * (t - 2) + j - 1) * d];
        let gsim = |x: &[f64], y: &[f64]| (dot(x, y) / tau).exp();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..b {
            for j in 2..t {
                let anchor = p(i, j);
                let mut den = 0.0;
                for i2 in 0..b {
                    for j2 in 0..t {
                        den += gsim(anchor, s(i2, j2));
                    }
                    for j2 in 2..t {
                        if !(exclude_self && i2 == i && j2 == j) {
                            den += gsim(anchor, p(i2, j2));
                        }
                    }
                }
                total += -(gsim(anchor, s(i, j)) / den).ln();
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn identical_embeddings_give_log_m() {
        let zs = Tensor::full(&[1, 3, 2], 0.3);
        let zp = Tensor::full(&[1, 1, 2], 0.3);
        let l = eval_setcon(&zs, &zp, &ContrastiveConfig::default()).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..20 {
            let zs = random(&[2, 3, 2], seed);
            let zp = random(&[2, 1, 2], seed + 100);
            for (mode, ex) in [(Denominator::Literal, false), (Denominator::ExcludeSelf, true)] {
                let cfg = ContrastiveConfig {
                    tau: 0.5,
                    denominator: mode,
                };
                let got = eval_setcon(&zs, &zp, &cfg).unwrap();
                let want = brute_setcon(&zs, &zp, 0.5, ex);
                assert!(((got - want) / want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        let zs = Tensor::from_f64(&[1, 3, 2], &[0.0, 1.0, 0.0, -1.0, 3.0, 0.0]).unwrap();
        let zp = Tensor::from_f64(&[1, 1, 2], &[3.0, 0.0]).unwrap();
        let cfg = ContrastiveConfig {
            tau: 0.5,
            denominator: Denominator::ExcludeSelf,
        };
        let l = eval_setcon(&zs, &zp, &cfg).unwrap();
        // log(1 + 2e⁻¹⁸)
        assert!(l > 0.0 && (l - (2.0 * (-18f64).exp()).ln_1p()).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        let zs = random(&[1, 3, 2], 0);
        let zp = random(&[1, 1, 2], 1);
        for tau in [0.0, -1.0, f64::NAN] {
            let cfg = ContrastiveConfig {
                tau,
                ..Default::default()
            };
            assert!(matches!(eval_setcon(&zs, &zp, &cfg), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn slotwise_matches_per_index_brute_force() {
        let cfg = ContrastiveConfig::default();
        for seed in 0..10 {
            let s = random(&[2, 4, 3, 2], seed);
            let p = random(&[2, 2, 3, 2], seed + 50);
            let got = eval_slotwise(&s, &p, &cfg);
            let mut want = 0.0;
            for k in 0..3 {
                let zs = Tensor::from_fn(&[2, 4, 2], |i| s.data()[(i / 2) * 6 + k * 2 + i % 2]);
                let zp = Tensor::from_fn(&[2, 2, 2], |i| p.data()[(i / 2) * 6 + k * 2 + i % 2]);
                want += brute_setcon(&zs, &zp, 0.5, false) / 3.0;
            }
            assert!(((got - want) / want).abs() < 1e-10);
        }
    }

    #[test]
    fn slotwise_is_blind_to_duplicated_slots() {
        let cfg = ContrastiveConfig::default();
        let s = random(&[2, 3, 4, 2], 7);
        let p = random(&[2, 1, 4, 2], 8);
        let dup = |x: &Tensor<f64>| Tensor::from_fn(x.shape(), |i| x.data()[(i / 8) * 8 + i % 2]);
        let single = |x: &Tensor<f64>| {
            let mut shape = x.shape().to_vec();
            shape[2] = 1;
            Tensor::from_fn(&shape, |i| x.data()[(i / 2) * 8 + i % 2])
        };
        let a = eval_slotwise(&dup(&s), &dup(&p), &cfg);
        let b = eval_slotwise(&single(&s), &single(&p), &cfg);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn misaligned_inputs_are_dimension_errors() {
        let mut g = Graph::<f64>::new();
        let s = g.constant(random(&[2, 4, 2], 0));
        let p = g.constant(random(&[2, 1, 2], 1));
        assert!(matches!(
            setcon_loss(&mut g, s, p, &ContrastiveConfig::default()),
            Err(Error::Dimension { .. })
        ));
        let s = g.constant(random(&[2, 3, 4, 2], 0));
        let p = g.constant(random(&[2, 1, 3, 2], 1));
        assert!(matches!(
            slotwise_loss(&mut g, s, p, &ContrastiveConfig::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
        let b = g.constant(Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap());
        let m = mse(&mut g, a, b).unwrap();
        assert_eq!(g.value(m).item(), 1.0);
        let m = mse(&mut g, a, a).unwrap();
        assert_eq!(g.value(m).item(), 0.0);
        let c = g.constant(Tensor::zeros(&[3]));
        assert!(mse(&mut g, a, c).is_err());
    }

    proptest! {
        #[test]
        fn batch_reordering_leaves_losses_unchanged(seed in 0u64..1000) {
            let cfg = ContrastiveConfig::default();
            let zs = random(&[3, 4, 2], seed);
            let zp = random(&[3, 2, 2], seed + 1);
            let rot = |x: &Tensor<f64>| {
                let row = x.len() / 3;
                Tensor::from_fn(x.shape(), |i| x.data()[(i + row) % x.len()])
            };
            let a = eval_setcon(&zs, &zp, &cfg).unwrap();
            let b = eval_setcon(&rot(&zs), &rot(&zp), &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= -1e-9);

            let s = random(&[3, 4, 2, 2], seed + 2);
            let p = random(&[3, 2, 2, 2], seed + 3);
            let a = eval_slotwise(&s, &p, &cfg);
            let b = eval_slotwise(&rot(&s), &rot(&p), &cfg);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
