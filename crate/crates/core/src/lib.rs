//! Object-centric video representation learning with a set-level contrastive
//! objective.
//!
//! Slots extracted by Slot Attention (or a feature-map MLP baseline) are
//! aggregated by a DeepSets encoder, and a per-slot transition model predicts
//! the slot set two frames ahead; the contrastive loss is applied to the
//! aggregated set embeddings rather than to individual slots. The crate also
//! carries the slotwise contrastive and reconstruction baselines, two
//! synthetic video datasets, a stop-gradient spatial-broadcast decoder probe
//! with MSE/ARI metrics, and a reproducible training harness.
//!
//! | module | contents |
//! |--------|----------|
//! | [`diffcore`] | tensors, reverse-mode tape, Adam, gradient checking, checkpoints |
//! | [`datasets`] | Multi-Object GridWorld and Bouncing Balls generators, container format |
//! | [`model`] | backbone, Slot Attention, FM-MLP, transition, set encoder |
//! | [`objectives`] | set-contrastive, slotwise contrastive and reconstruction losses |
//! | [`evaluation`] | broadcast decoder probe, MSE, ARI, rollouts, reports, figures |
//! | [`harness`] | configs, training loop, learning-rate sweep, CLI |
//!
//! Every capability has a runnable program under `examples/`.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod model;
pub mod objectives;
pub mod seeding;

pub use error::{Error, Result};
