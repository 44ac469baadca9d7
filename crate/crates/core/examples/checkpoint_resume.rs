//! Interrupt a run, resume it from its checkpoint and compare against an
//! uninterrupted run bit for bit (64-bit mode).
//!
//! cargo run --release --example checkpoint_resume

use setcon::harness::{train, DataSource, ExperimentConfig, TrainOptions, TrainState};

fn main() -> setcon::Result<()> {
    let cfg = ExperimentConfig::resolve(
        None,
        &[
            "train.steps=12".into(),
            "train.batch_size=8".into(),
            "train.precision=f64".into(),
        ],
    )?;
    let data = DataSource::prepare(&cfg)?;
    let dir = tempfile::tempdir()?;

    let full = train::<f64>(&cfg, &data, &TrainOptions::default())?;

    let first = TrainOptions {
        out: Some(dir.path().to_path_buf()),
        stop_after: Some(5),
        ..TrainOptions::default()
    };
    train::<f64>(&cfg, &data, &first)?;
    let ckpt = dir.path().join("checkpoint");
    println!("interrupted at step {}", TrainState::<f64>::load(&ckpt)?.step);
    let resumed = train::<f64>(
        &cfg,
        &data,
        &TrainOptions {
            resume: Some(ckpt),
            ..TrainOptions::default()
        },
    )?;
    println!(
        "resumed to step {}; model bit-identical: {}, decoder bit-identical: {}",
        resumed.state.step,
        resumed.state.model.bit_identical(&full.state.model),
        resumed.state.decoder.bit_identical(&full.state.decoder)
    );
    Ok(())
}
