//! On-disk dataset container: `manifest.json` plus raw little-endian
//! `frames.f32le` and `masks.u8` blobs, sequence-major and row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{
    bouncing_balls_sequence, gridworld_sequence, BallsConfig, DatasetKind, GridWorldConfig, Rgb, SequenceMeta,
    VideoSequence,
};
use crate::diffcore::checkpoint::json_format_error;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::seeding;

const MANIFEST: &str = "manifest.json";
const FRAMES: &str = "frames.f32le";
const MASKS: &str = "masks.u8";
const FORMAT: &str = "setcon-dataset";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub sequences: Vec<VideoSequence>,
    /// Sequences `eval_start..` form the evaluation split.
    pub eval_start: usize,
}

impl Dataset {
    pub fn train(&self) -> &[VideoSequence] {
        &self.sequences[..self.eval_start]
    }

    pub fn eval(&self) -> &[VideoSequence] {
        &self.sequences[self.eval_start..]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRecord {
    seed: u64,
    palette: Vec<Rgb>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    dataset: DatasetKind,
    seed: u64,
    count: usize,
    /// `[T, H, W, 3]` for every sequence.
    frame_shape: [usize; 4],
    dtype: String,
    num_objects: usize,
    eval_start: usize,
    sequences: Vec<SequenceRecord>,
}

fn seeds_for(root: u64, count: usize) -> impl Iterator<Item = u64> {
    (0..count as u64).map(move |i| seeding::derive_seed(root, seeding::DATA, i))
}

/// `count` Bouncing Balls sequences sharing one palette drawn from `root`;
/// the last `eval_count` are the evaluation split.
pub fn generate_balls_dataset(root: u64, cfg: &BallsConfig, count: usize, eval_count: usize) -> Result<Dataset> {
    use rand::Rng;
    if eval_count > count {
        return Err(Error::Argument(format!(
            "eval split {eval_count} exceeds {count} sequences"
        )));
    }
    let mut cfg = *cfg;
    cfg.palette_offset = seeding::stream_rng(root, seeding::PALETTE, 0).gen_range(0.0..1.0);
    let sequences = seeds_for(root, count)
        .map(|s| bouncing_balls_sequence(s, &cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        kind: DatasetKind::Balls,
        seed: root,
        sequences,
        eval_start: count - eval_count,
    })
}

pub fn generate_gridworld_dataset(
    root: u64,
    cfg: &GridWorldConfig,
    count: usize,
    eval_count: usize,
) -> Result<Dataset> {
    if eval_count > count {
        return Err(Error::Argument(format!(
            "eval split {eval_count} exceeds {count} sequences"
        )));
    }
    let sequences = seeds_for(root, count)
        .map(|s| gridworld_sequence(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        kind: DatasetKind::GridWorld,
        seed: root,
        sequences,
        eval_start: count - eval_count,
    })
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let first = dataset
        .sequences
        .first()
        .ok_or_else(|| Error::Argument("cannot write an empty dataset".into()))?;
    let shape = first.frames.shape();
    let frame_shape = [shape[0], shape[1], shape[2], shape[3]];
    let mut frames = Vec::new();
    let mut masks = Vec::new();
    for seq in &dataset.sequences {
        if seq.frames.shape() != shape || seq.meta.num_objects != first.meta.num_objects {
            return Err(Error::Argument(format!(
                "sequence {} does not match the shape of the first sequence",
                seq.meta.seed
            )));
        }
        for v in seq.frames.data() {
            frames.extend_from_slice(&v.to_le_bytes());
        }
        masks.extend_from_slice(&seq.masks);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        dataset: dataset.kind,
        seed: dataset.seed,
        count: dataset.sequences.len(),
        frame_shape,
        dtype: "f32".into(),
        num_objects: first.meta.num_objects,
        eval_start: dataset.eval_start,
        sequences: dataset
            .sequences
            .iter()
            .map(|s| SequenceRecord {
                seed: s.meta.seed,
                palette: s.meta.palette.clone(),
            })
            .collect(),
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(FRAMES), frames)?;
    fs::write(dir.join(MASKS), masks)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn check_len(path: &Path, actual: usize, expected: usize) -> Result<()> {
    if actual == expected {
        return Ok(());
    }
    Err(Error::Format {
        path: path.to_path_buf(),
        position: actual.min(expected) as u64,
        detail: format!("expected {expected} bytes, found {actual}"),
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| json_format_error(&manifest_path, &text, &e))?;
    let format_err = |detail: String| Error::Format {
        path: manifest_path.clone(),
        position: 0,
        detail,
    };
    if m.format != FORMAT || m.version != 1 || m.dtype != "f32" {
        return Err(format_err(format!(
            "unsupported container {} v{} ({})",
            m.format, m.version, m.dtype
        )));
    }
    if m.sequences.len() != m.count || m.eval_start > m.count || m.frame_shape[3] != 3 {
        return Err(format_err("inconsistent counts or frame shape".into()));
    }

    let [t, h, w, c] = m.frame_shape;
    let per_frames = t * h * w * c;
    let per_masks = t * h * w;
    let frames_path = dir.join(FRAMES);
    let masks_path = dir.join(MASKS);
    let frame_bytes = fs::read(&frames_path)?;
    let mask_bytes = fs::read(&masks_path)?;
    check_len(&frames_path, frame_bytes.len(), m.count * per_frames * 4)?;
    check_len(&masks_path, mask_bytes.len(), m.count * per_masks)?;
    if let Some(pos) = mask_bytes.iter().position(|&v| v as usize > m.num_objects) {
        return Err(Error::Format {
            path: masks_path,
            position: pos as u64,
            detail: format!("mask id {} exceeds {} objects", mask_bytes[pos], m.num_objects),
        });
    }

    let mut sequences = Vec::with_capacity(m.count);
    for (i, rec) in m.sequences.into_iter().enumerate() {
        let data: Vec<f32> = frame_bytes[i * per_frames * 4..(i + 1) * per_frames * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        sequences.push(VideoSequence {
            frames: Tensor::new(m.frame_shape.to_vec(), data)?,
            masks: mask_bytes[i * per_masks..(i + 1) * per_masks].to_vec(),
            meta: SequenceMeta {
                dataset: m.dataset,
                seed: rec.seed,
                palette: rec.palette,
                num_objects: m.num_objects,
            },
        });
    }
    Ok(Dataset {
        kind: m.dataset,
        seed: m.seed,
        sequences,
        eval_start: m.eval_start,
    })
}
