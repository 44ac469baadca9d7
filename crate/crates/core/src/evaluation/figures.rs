use std::path::Path;

use image::{Rgb, RgbImage};

use crate::datasets::VideoSequence;
use crate::diffcore::{Graph, ParameterTree, Real, Tensor};
use crate::error::Result;
use crate::evaluation::{broadcast_decode, rollout, DecoderConfig};
use crate::model::{batch_frames, encode_frames, forward_sequence, ModelConfig};

/// One small image, row-major RGB bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Tile {
    /// From RGB values in [−1, 1], `[H·W·3]`.
    pub fn from_signed_rgb(values: &[f64], height: usize, width: usize) -> Tile {
        let to8 = |v: f64| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
        Tile {
            height,
            width,
            pixels: values.chunks(3).map(|c| [to8(c[0]), to8(c[1]), to8(c[2])]).collect(),
        }
    }

    /// Grayscale from values in [0, 1], `[H·W]`.
    pub fn from_unit_gray(values: &[f64], height: usize, width: usize) -> Tile {
        Tile {
            height,
            width,
            pixels: values
                .iter()
                .map(|v| {
                    let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    [b, b, b]
                })
                .collect(),
        }
    }
}

/// Lay out rows of tiles, each pixel enlarged `scale` times, with a 1-pixel
/// gray gutter, and write a PNG.
pub fn save_grid(path: &Path, rows: &[Vec<Tile>], scale: usize) -> Result<()> {
    let scale = scale.max(1);
    let cell_h = rows.iter().flatten().map(|t| t.height).max().unwrap_or(1) * scale;
    let cell_w = rows.iter().flatten().map(|t| t.width).max().unwrap_or(1) * scale;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let (w, h) = (cols * (cell_w + 1) + 1, rows.len().max(1) * (cell_h + 1) + 1);
    let mut img = RgbImage::from_pixel(w as u32, h as u32, Rgb([96, 96, 96]));
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let (x0, y0) = (c * (cell_w + 1) + 1, r * (cell_h + 1) + 1);
            for y in 0..tile.height * scale {
                for x in 0..tile.width * scale {
                    let px = tile.pixels[(y / scale) * tile.width + x / scale];
                    img.put_pixel((x0 + x) as u32, (y0 + y) as u32, Rgb(px));
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

fn as_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

/// Rows: input frames, reconstructions from `s_t`, then per slot its
/// attention mask (Slot Attention only) and its normalized decoder alpha.
#[allow(clippy::too_many_arguments)]
pub fn plot_sequence<T: Real>(
    path: &Path,
    params: &ParameterTree<T>,
    cfg: &ModelConfig,
    decoder: &ParameterTree<T>,
    dec_cfg: &DecoderConfig,
    seq: &VideoSequence,
    noise_seed: u64,
    scale: usize,
) -> Result<()> {
    let frames = batch_frames::<T>(&[seq])?;
    let (t, h, w) = (seq.num_frames(), seq.height(), seq.width());
    let (px, k) = (h * w, cfg.num_slots);
    let mut g = Graph::new();
    let p = params.bind_constant(&mut g);
    let dp = decoder.bind_constant(&mut g);
    let x = g.constant(frames.clone());
    let out = forward_sequence(&mut g, &p, cfg, x, noise_seed)?;
    let dec = broadcast_decode(&mut g, &dp, dec_cfg, out.slots, h, w)?;
    let input = as_f64(&frames);
    let recon = as_f64(g.value(dec.composite));
    let alpha = as_f64(g.value(dec.alpha));

    let mut rows = vec![
        (0..t)
            .map(|i| Tile::from_signed_rgb(&input[i * px * 3..(i + 1) * px * 3], h, w))
            .collect(),
        (0..t)
            .map(|i| Tile::from_signed_rgb(&recon[i * px * 3..(i + 1) * px * 3], h, w))
            .collect(),
    ];
    if let Some(attn) = out.attention {
        // [1, T, N, K]
        let a = as_f64(g.value(attn));
        for slot in 0..k {
            rows.push(
                (0..t)
                    .map(|i| {
                        let v: Vec<f64> = (0..px).map(|n| a[(i * px + n) * k + slot]).collect();
                        Tile::from_unit_gray(&v, h, w)
                    })
                    .collect(),
            );
        }
    }
    for slot in 0..k {
        rows.push(
            (0..t)
                .map(|i| {
                    let base = (i * k + slot) * px;
                    Tile::from_unit_gray(&alpha[base..base + px], h, w)
                })
                .collect(),
        );
    }
    save_grid(path, &rows, scale)
}

/// Rows: ground-truth future frames and decoded rollout predictions from the
/// first two frames of `seq`.
#[allow(clippy::too_many_arguments)]
pub fn plot_rollout<T: Real>(
    path: &Path,
    params: &ParameterTree<T>,
    cfg: &ModelConfig,
    decoder: &ParameterTree<T>,
    dec_cfg: &DecoderConfig,
    seq: &VideoSequence,
    steps: usize,
    noise_seed: u64,
    scale: usize,
) -> Result<()> {
    let (h, w) = (seq.height(), seq.width());
    let px = h * w;
    let frames = batch_frames::<T>(&[seq])?;
    let mut g = Graph::new();
    let p = params.bind_constant(&mut g);
    let x = g.constant(frames);
    let ctx = g.slice(x, 1, 0, 2)?;
    let ctx = g.reshape(ctx, &[2, h, w, 3])?;
    let (slots, _) = encode_frames(&mut g, &p, cfg, ctx, noise_seed)?;
    let slots = g.value(slots).clone();
    let s0 = slots.index_axis(0, 0)?;
    let s1 = slots.index_axis(0, 1)?;
    let preds = rollout(params, &s0, &s1, steps)?;

    let truth: Vec<Tile> = (0..steps)
        .map(|i| {
            let f: Vec<f64> = seq.frame(2 + i).iter().map(|&v| v as f64).collect();
            Tile::from_signed_rgb(&f, h, w)
        })
        .collect();
    let mut predicted = Vec::with_capacity(steps);
    for pred in preds {
        let mut g = Graph::new();
        let dp = decoder.bind_constant(&mut g);
        let pv = g.constant(pred);
        let dec = broadcast_decode(&mut g, &dp, dec_cfg, pv, h, w)?;
        let img = as_f64(g.value(dec.composite));
        predicted.push(Tile::from_signed_rgb(&img[..px * 3], h, w));
    }
    save_grid(path, &[truth, predicted], scale)
}
