//! Bouncing Balls: three discs moving at constant speed in the unit box,
//! colliding with each other and the walls, rendered anti-aliased.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::palette::{palette, to_unit, Rgb};
use crate::datasets::{DatasetKind, SequenceMeta, VideoSequence};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// How approaching ball pairs respond on contact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionModel {
    /// Each ball mirrors its velocity about the contact tangent if it is
    /// moving into the other. Keeps every ball's speed fixed and swaps
    /// velocities in a head-on collision.
    #[default]
    Mirror,
    /// Equal-mass elastic impulse: normal components are exchanged.
    /// Conserves momentum and total kinetic energy, not per-ball speed.
    Exchange,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallsConfig {
    pub size: usize,
    pub num_frames: usize,
    pub num_balls: usize,
    pub radius: f64,
    pub speed: f64,
    #[serde(default)]
    pub collision: CollisionModel,
    /// Hue offset shared by the whole dataset.
    #[serde(default)]
    pub palette_offset: f64,
}

impl Default for BallsConfig {
    fn default() -> Self {
        BallsConfig {
            size: 32,
            num_frames: 12,
            num_balls: 3,
            radius: 0.1,
            speed: 0.06,
            collision: CollisionModel::Mirror,
            palette_offset: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl Ball {
    pub fn speed(&self) -> f64 {
        self.vel[0].hypot(self.vel[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallsState {
    pub balls: Vec<Ball>,
    pub radius: f64,
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn collide(a: &mut Ball, b: &mut Ball, radius: f64, model: CollisionModel) {
    let d = [b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]];
    let dist = d[0].hypot(d[1]);
    if dist >= 2.0 * radius || dist == 0.0 {
        return;
    }
    let n = [d[0] / dist, d[1] / dist];
    let closing = dot([a.vel[0] - b.vel[0], a.vel[1] - b.vel[1]], n);
    if closing > 0.0 {
        match model {
            CollisionModel::Mirror => {
                let va = dot(a.vel, n);
                if va > 0.0 {
                    a.vel = [a.vel[0] - 2.0 * va * n[0], a.vel[1] - 2.0 * va * n[1]];
                }
                let vb = dot(b.vel, n);
                if vb < 0.0 {
                    b.vel = [b.vel[0] - 2.0 * vb * n[0], b.vel[1] - 2.0 * vb * n[1]];
                }
            }
            CollisionModel::Exchange => {
                a.vel = [a.vel[0] - closing * n[0], a.vel[1] - closing * n[1]];
                b.vel = [b.vel[0] + closing * n[0], b.vel[1] + closing * n[1]];
            }
        }
    }
    // Push the pair apart along the normal so they no longer overlap.
    let push = (2.0 * radius - dist) / 2.0;
    a.pos = [a.pos[0] - push * n[0], a.pos[1] - push * n[1]];
    b.pos = [b.pos[0] + push * n[0], b.pos[1] + push * n[1]];
}

fn reflect_walls(ball: &mut Ball, radius: f64) {
    let (lo, hi) = (radius, 1.0 - radius);
    for axis in 0..2 {
        let p = ball.pos[axis];
        if p < lo {
            ball.pos[axis] = 2.0 * lo - p;
            ball.vel[axis] = ball.vel[axis].abs();
        } else if p > hi {
            ball.pos[axis] = 2.0 * hi - p;
            ball.vel[axis] = -ball.vel[axis].abs();
        }
        ball.pos[axis] = ball.pos[axis].clamp(lo, hi);
    }
}

/// One frame of motion: advance, resolve ball contacts, then walls.
pub fn balls_step(state: &BallsState, model: CollisionModel) -> BallsState {
    let r = state.radius;
    let mut balls = state.balls.clone();
    for b in &mut balls {
        b.pos = [b.pos[0] + b.vel[0], b.pos[1] + b.vel[1]];
    }
    for i in 0..balls.len() {
        for j in i + 1..balls.len() {
            let (left, right) = balls.split_at_mut(j);
            collide(&mut left[i], &mut right[0], r, model);
        }
    }
    for b in &mut balls {
        reflect_walls(b, r);
    }
    BallsState { balls, radius: r }
}

/// Anti-aliased render: colors `[size²]` as 0..255 floats, and the mask.
pub fn render_balls(state: &BallsState, colors: &[Rgb], size: usize) -> (Vec<[f64; 3]>, Vec<u8>) {
    let mut pixels = vec![[0.0f64; 3]; size * size];
    let mut mask = vec![0u8; size * size];
    let scale = size as f64;
    let rad_px = state.radius * scale;
    for row in 0..size {
        for col in 0..size {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut best = (0.5, 0u8);
            for (k, ball) in state.balls.iter().enumerate() {
                let d = (px - ball.pos[0] * scale).hypot(py - ball.pos[1] * scale);
                let cover = (rad_px + 0.5 - d).clamp(0.0, 1.0);
                if cover == 0.0 {
                    continue;
                }
                let pix = &mut pixels[row * size + col];
                for c in 0..3 {
                    pix[c] = pix[c] * (1.0 - cover) + colors[k][c] as f64 * cover;
                }
                if cover >= best.0 {
                    best = (cover, (k + 1) as u8);
                }
            }
            mask[row * size + col] = best.1;
        }
    }
    (pixels, mask)
}

fn validate(cfg: &BallsConfig) -> Result<()> {
    let ok = cfg.size > 0
        && cfg.num_frames > 0
        && cfg.num_balls > 0
        && cfg.num_balls < 256
        && cfg.radius > 0.0
        && cfg.radius < 0.5
        && cfg.speed.is_finite()
        && cfg.speed >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::Argument(format!("invalid bouncing balls config {cfg:?}")))
    }
}

fn initial_state(rng: &mut ChaCha8Rng, cfg: &BallsConfig) -> Result<BallsState> {
    let (lo, hi) = (cfg.radius, 1.0 - cfg.radius);
    for _ in 0..10_000 {
        let centers: Vec<[f64; 2]> = (0..cfg.num_balls)
            .map(|_| [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)])
            .collect();
        let apart = (0..centers.len()).all(|i| {
            (i + 1..centers.len())
                .all(|j| (centers[i][0] - centers[j][0]).hypot(centers[i][1] - centers[j][1]) >= 2.0 * cfg.radius)
        });
        if apart {
            let balls = centers
                .into_iter()
                .map(|pos| {
                    let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    Ball {
                        pos,
                        vel: [cfg.speed * heading.cos(), cfg.speed * heading.sin()],
                    }
                })
                .collect();
            return Ok(BallsState {
                balls,
                radius: cfg.radius,
            });
        }
    }
    Err(Error::Argument(format!(
        "could not place {} non-overlapping balls of radius {}",
        cfg.num_balls, cfg.radius
    )))
}

/// Physical states for every frame of the sequence with this seed.
pub fn bouncing_balls_trace(seed: u64, cfg: &BallsConfig) -> Result<Vec<BallsState>> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![initial_state(&mut rng, cfg)?];
    for _ in 1..cfg.num_frames {
        let next = balls_step(states.last().unwrap(), cfg.collision);
        states.push(next);
    }
    Ok(states)
}

pub fn bouncing_balls_sequence(seed: u64, cfg: &BallsConfig) -> Result<VideoSequence> {
    let states = bouncing_balls_trace(seed, cfg)?;
    let colors = palette(cfg.num_balls, cfg.palette_offset)?;
    let n = cfg.size;
    let mut frames = Vec::with_capacity(cfg.num_frames * n * n * 3);
    let mut masks = Vec::with_capacity(cfg.num_frames * n * n);
    for state in &states {
        let (pixels, mask) = render_balls(state, &colors, n);
        frames.extend(pixels.iter().flat_map(|p| p.iter().map(|&c| to_unit(c))));
        masks.extend(mask);
    }
    Ok(VideoSequence {
        frames: Tensor::new(vec![cfg.num_frames, n, n, 3], frames)?,
        masks,
        meta: SequenceMeta {
            dataset: DatasetKind::Balls,
            seed,
            palette: colors,
            num_objects: cfg.num_balls,
        },
    })
}
