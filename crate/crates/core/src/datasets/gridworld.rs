//! Multi-Object GridWorld: single-pixel objects moving one cell per frame on
//! a black grid, reflecting off the border and passing through each other.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::palette::{palette, to_unit, Rgb};
use crate::datasets::{DatasetKind, SequenceMeta, VideoSequence};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    /// (row, col) displacement.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridObject {
    pub row: usize,
    pub col: usize,
    pub direction: Direction,
    pub color: Rgb,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridWorldState {
    pub size: usize,
    pub objects: Vec<GridObject>,
    /// Drawing order for the frame: later entries are drawn on top.
    pub z_order: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorldConfig {
    pub size: usize,
    pub num_frames: usize,
    pub num_objects: usize,
    pub num_colors: usize,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        GridWorldConfig {
            size: 5,
            num_frames: 8,
            num_objects: 3,
            num_colors: 3,
        }
    }
}

/// Per-frame states plus the palette used for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GridWorldTrace {
    pub states: Vec<GridWorldState>,
    pub palette: Vec<Rgb>,
    pub palette_offset: f64,
}

/// Move every object one cell; an object that would leave the grid turns
/// around and moves one cell the other way. z-order is carried over.
pub fn gridworld_step(state: &GridWorldState) -> GridWorldState {
    let n = state.size as i64;
    let objects = state
        .objects
        .iter()
        .map(|o| {
            let (dr, dc) = o.direction.delta();
            let (r, c) = (o.row as i64 + dr, o.col as i64 + dc);
            if (0..n).contains(&r) && (0..n).contains(&c) {
                GridObject {
                    row: r as usize,
                    col: c as usize,
                    ..o.clone()
                }
            } else {
                let dir = o.direction.flipped();
                let (dr, dc) = dir.delta();
                // A 1-wide grid has nowhere to go; stay put.
                let (r, c) = (o.row as i64 + dr, o.col as i64 + dc);
                let (r, c) = if (0..n).contains(&r) && (0..n).contains(&c) {
                    (r as usize, c as usize)
                } else {
                    (o.row, o.col)
                };
                GridObject {
                    row: r,
                    col: c,
                    direction: dir,
                    color: o.color,
                }
            }
        })
        .collect();
    GridWorldState {
        size: state.size,
        objects,
        z_order: state.z_order.clone(),
    }
}

/// Pixel colors and instance mask (0 = background, k = object k−1) for one state.
pub fn render_gridworld(state: &GridWorldState) -> (Vec<Rgb>, Vec<u8>) {
    let n = state.size;
    let mut pixels = vec![[0u8; 3]; n * n];
    let mut mask = vec![0u8; n * n];
    for &k in &state.z_order {
        let o = &state.objects[k];
        pixels[o.row * n + o.col] = o.color;
        mask[o.row * n + o.col] = (k + 1) as u8;
    }
    (pixels, mask)
}

/// Number of distinct initial configurations of `num_objects` distinguishable
/// objects over the `4·size²` (position, direction) states.
pub fn gridworld_state_space(num_objects: usize, size: usize) -> u128 {
    let states = 4 * (size * size) as u128;
    (0..num_objects as u128).map(|i| states.saturating_sub(i)).product()
}

fn validate(cfg: &GridWorldConfig) -> Result<()> {
    if cfg.size == 0 || cfg.num_frames == 0 || cfg.num_colors == 0 {
        return Err(Error::Argument(format!("degenerate gridworld config {cfg:?}")));
    }
    if cfg.num_objects > 4 * cfg.size * cfg.size {
        return Err(Error::Argument(format!(
            "{} objects cannot hold distinct (position, direction) pairs on a {}x{} grid",
            cfg.num_objects, cfg.size, cfg.size
        )));
    }
    if cfg.num_objects > u8::MAX as usize {
        return Err(Error::Argument("at most 255 objects fit in a u8 mask".into()));
    }
    Ok(())
}

pub fn gridworld_trace(seed: u64, cfg: &GridWorldConfig) -> Result<GridWorldTrace> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette_offset: f64 = rng.gen_range(0.0..1.0);
    let colors = palette(cfg.num_colors, palette_offset)?;

    let cells = cfg.size * cfg.size;
    let picks = sample(&mut rng, 4 * cells, cfg.num_objects);
    let mut color_order: Vec<usize> = (0..cfg.num_colors).collect();
    color_order.shuffle(&mut rng);
    let objects: Vec<GridObject> = picks
        .iter()
        .enumerate()
        .map(|(i, s)| GridObject {
            row: (s % cells) / cfg.size,
            col: s % cfg.size,
            direction: Direction::ALL[s / cells],
            color: colors[color_order[i % cfg.num_colors]],
        })
        .collect();

    let mut z_order: Vec<usize> = (0..cfg.num_objects).collect();
    z_order.shuffle(&mut rng);
    let mut states = vec![GridWorldState {
        size: cfg.size,
        objects,
        z_order,
    }];
    for _ in 1..cfg.num_frames {
        let mut next = gridworld_step(states.last().unwrap());
        next.z_order.shuffle(&mut rng);
        states.push(next);
    }
    Ok(GridWorldTrace {
        states,
        palette: colors,
        palette_offset,
    })
}

pub fn gridworld_sequence(seed: u64, cfg: &GridWorldConfig) -> Result<VideoSequence> {
    let trace = gridworld_trace(seed, cfg)?;
    let n = cfg.size;
    let mut frames = Vec::with_capacity(cfg.num_frames * n * n * 3);
    let mut masks = Vec::with_capacity(cfg.num_frames * n * n);
    for state in &trace.states {
        let (pixels, mask) = render_gridworld(state);
        frames.extend(pixels.iter().flat_map(|p| p.iter().map(|&c| to_unit(c as f64))));
        masks.extend(mask);
    }
    Ok(VideoSequence {
        frames: Tensor::new(vec![cfg.num_frames, n, n, 3], frames)?,
        masks,
        meta: SequenceMeta {
            dataset: DatasetKind::GridWorld,
            seed,
            palette: trace.palette,
            num_objects: cfg.num_objects,
        },
    })
}
