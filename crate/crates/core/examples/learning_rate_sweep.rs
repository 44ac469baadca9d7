//! The five-point learning-rate sweep on a tiny budget, selecting by slot-head
//! probe MSE.
//!
//! cargo run --release --example learning_rate_sweep

use setcon::harness::{lr_sweep, resolve_lr, ExperimentConfig, SWEEP_LRS};

fn main() -> setcon::Result<()> {
    let cfg = ExperimentConfig::resolve(None, &["train.steps=40".into(), "train.batch_size=16".into()])?;
    let out = lr_sweep::<f32>(&cfg, &SWEEP_LRS, None)?;
    for (i, r) in out.runs.iter().enumerate() {
        println!(
            "lr {:e} (effective {:e}): {:?}{}",
            r.lr,
            resolve_lr(r.lr, cfg.train.batch_size)?,
            r.score,
            if i == out.best { "  <- selected" } else { "" }
        );
    }
    Ok(())
}
