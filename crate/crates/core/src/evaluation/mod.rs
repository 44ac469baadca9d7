//! Representation probing: a spatial broadcast decoder trained on stopped
//! slots, MSE and background-excluded ARI, multi-step rollouts, metric
//! reports and PNG figures.

mod decoder;
mod figures;
mod metrics;
mod report;
mod rollout;

pub use decoder::{broadcast_decode, init_decoder, probe_train_step, DecoderConfig, DecoderOutput, ProbeStep};
pub use figures::{plot_rollout, plot_sequence, save_grid, Tile};
pub use metrics::{adjusted_rand_index, argmax_labels, ari, mse, SegmentationPair};
pub use report::{append_jsonl, evaluate_heads, mean_sem, Head, MetricRecord, REPORT_UNIT};
pub use rollout::{rollout, rollout_mse, MAX_ROLLOUT};
