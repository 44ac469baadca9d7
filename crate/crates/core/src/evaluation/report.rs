use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::VideoSequence;
use crate::diffcore::{Graph, ParameterTree, Real};
use crate::error::{Error, Result};
use crate::evaluation::{adjusted_rand_index, argmax_labels, broadcast_decode, DecoderConfig};
use crate::model::{batch_frames, forward_sequence, ModelConfig};

/// Reported metric values are in units of this factor.
pub const REPORT_UNIT: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Encoded slots `s_t`.
    Slots,
    /// Predictions `p_t`.
    Preds,
}

/// One metrics line: mean and standard error over sequences, ×1e-2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub head: Head,
    pub mse_mean: f64,
    pub mse_sem: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari_sem: Option<f64>,
    pub n: usize,
}

/// Sample mean and standard error (sample standard deviation / √n).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Default)]
struct HeadScores {
    mse: Vec<f64>,
    ari: Vec<f64>,
}

/// Decode both heads of every sequence with the probe and score them.
/// ARI (background excluded, alpha argmax labels) is computed when
/// `with_ari` is set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_heads<T: Real>(
    params: &ParameterTree<T>,
    cfg: &ModelConfig,
    decoder: Option<&ParameterTree<T>>,
    dec_cfg: &DecoderConfig,
    sequences: &[VideoSequence],
    with_ari: bool,
    noise_seed: u64,
    chunk: usize,
) -> Result<Vec<MetricRecord>> {
    let decoder = decoder.ok_or_else(|| Error::Config {
        key: "decoder".into(),
        detail: "evaluation needs a trained decoder probe".into(),
    })?;
    let mut heads = [HeadScores::default(), HeadScores::default()];
    for (ci, group) in sequences.chunks(chunk.max(1)).enumerate() {
        let refs: Vec<&VideoSequence> = group.iter().collect();
        let frames = batch_frames::<T>(&refs)?;
        let s = frames.shape().to_vec();
        let (t, h, w) = (s[1], s[2], s[3]);
        let px = h * w;
        let mut g = Graph::new();
        let p = params.bind_constant(&mut g);
        let dp = decoder.bind_constant(&mut g);
        let x = g.constant(frames.clone());
        let out = forward_sequence(&mut g, &p, cfg, x, noise_seed.wrapping_add(ci as u64))?;
        for (hi, (var, first)) in [(out.slots, 0usize), (out.preds, 2usize)].into_iter().enumerate() {
            let dec = broadcast_decode(&mut g, &dp, dec_cfg, var, h, w)?;
            let comp = g.value(dec.composite).data();
            let alpha = g.value(dec.alpha).data();
            let steps = t - first;
            for (bi, seq) in group.iter().enumerate() {
                let mut err = 0.0;
                let mut aris = Vec::new();
                for j in 0..steps {
                    let frame = seq.frame(first + j);
                    let base = (bi * steps + j) * px * 3;
                    err += frame
                        .iter()
                        .zip(&comp[base..base + px * 3])
                        .map(|(a, b)| (*a as f64 - b.as_f64()).powi(2))
                        .sum::<f64>();
                    if with_ari {
                        let k = cfg.num_slots;
                        let a0 = (bi * steps + j) * k * px;
                        let labels = argmax_labels(&alpha[a0..a0 + k * px], k);
                        let truth = seq.mask(first + j);
                        let (pred, gt): (Vec<u32>, Vec<u32>) = labels
                            .iter()
                            .zip(truth)
                            .filter(|(_, &m)| m != 0)
                            .map(|(&l, &m)| (l, m as u32))
                            .unzip();
                        if let Some(v) = adjusted_rand_index(&pred, &gt) {
                            aris.push(v);
                        }
                    }
                }
                heads[hi].mse.push(err / (steps * px * 3) as f64);
                if !aris.is_empty() {
                    heads[hi].ari.push(aris.iter().sum::<f64>() / aris.len() as f64);
                }
            }
        }
    }
    Ok([Head::Slots, Head::Preds]
        .into_iter()
        .zip(heads)
        .map(|(head, scores)| {
            let (mse_mean, mse_sem) = mean_sem(&scores.mse);
            let (ari_mean, ari_sem) = if with_ari {
                let (m, s) = mean_sem(&scores.ari);
                (Some(m / REPORT_UNIT), Some(s / REPORT_UNIT))
            } else {
                (None, None)
            };
            MetricRecord {
                head,
                mse_mean: mse_mean / REPORT_UNIT,
                mse_sem: mse_sem / REPORT_UNIT,
                ari_mean,
                ari_sem,
                n: scores.mse.len(),
            }
        })
        .collect())
}

/// Append records as JSON lines.
pub fn append_jsonl<S: Serialize>(path: &Path, records: &[S]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}
