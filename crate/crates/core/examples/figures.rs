//! Write attention/alpha/reconstruction and rollout grids for a briefly
//! trained model.
//!
//! cargo run --release --example figures -- /tmp/setcon-figures

use std::path::PathBuf;

use setcon::evaluation::{plot_rollout, plot_sequence};
use setcon::harness::{train, DataSource, ExperimentConfig, TrainOptions};

fn main() -> setcon::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("setcon-figures"));
    std::fs::create_dir_all(&out)?;
    let cfg = ExperimentConfig::resolve(None, &["train.steps=200".into(), "train.batch_size=32".into()])?;
    let data = DataSource::prepare(&cfg)?;
    let s = train::<f32>(&cfg, &data, &TrainOptions::default())?.state;
    let seq = &data.eval()[0];
    plot_sequence(
        &out.join("sequence.png"),
        &s.model,
        &cfg.model,
        &s.decoder,
        &cfg.decoder,
        seq,
        0,
        12,
    )?;
    plot_rollout(
        &out.join("rollout.png"),
        &s.model,
        &cfg.model,
        &s.decoder,
        &cfg.decoder,
        seq,
        5,
        0,
        12,
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
