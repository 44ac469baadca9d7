//! Synthetic video datasets: Multi-Object GridWorld (generated on the fly)
//! and Bouncing Balls (pre-generated to a container on disk).

mod balls;
mod container;
mod gridworld;
mod palette;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;

pub use balls::{
    balls_step, bouncing_balls_sequence, bouncing_balls_trace, render_balls, Ball, BallsConfig, BallsState,
    CollisionModel,
};
pub use container::{generate_balls_dataset, generate_gridworld_dataset, read_dataset, write_dataset, Dataset};
pub use gridworld::{
    gridworld_sequence, gridworld_state_space, gridworld_step, gridworld_trace, render_gridworld, Direction,
    GridObject, GridWorldConfig, GridWorldState, GridWorldTrace,
};
pub use palette::{hsv_to_rgb, palette, to_unit, Rgb};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[serde(rename = "gridworld")]
    GridWorld,
    Balls,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::GridWorld => "gridworld",
            DatasetKind::Balls => "balls",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub dataset: DatasetKind,
    pub seed: u64,
    pub palette: Vec<Rgb>,
    pub num_objects: usize,
}

/// One episode: frames `[T, H, W, 3]` in [−1, 1] and instance masks
/// `[T, H, W]` (0 = background, k = object k−1).
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub frames: Tensor<f32>,
    pub masks: Vec<u8>,
    pub meta: SequenceMeta,
}

impl VideoSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn mask(&self, t: usize) -> &[u8] {
        let p = self.pixels();
        &self.masks[t * p..(t + 1) * p]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.pixels() * 3;
        &self.frames.data()[t * n..(t + 1) * n]
    }
}
