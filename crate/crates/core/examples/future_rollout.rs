//! Roll the transition model forward five steps from two encoded frames and
//! report the decoded MSE per step, after a brief training run.
//!
//! cargo run --release --example future_rollout

use setcon::evaluation::{rollout_mse, MAX_ROLLOUT};
use setcon::harness::{train, DataSource, ExperimentConfig, TrainOptions};

fn main() -> setcon::Result<()> {
    let cfg = ExperimentConfig::resolve(None, &["train.steps=200".into(), "train.batch_size=32".into()])?;
    let data = DataSource::prepare(&cfg)?;
    let run = train::<f32>(&cfg, &data, &TrainOptions::default())?;
    let s = &run.state;
    let refs: Vec<_> = data.eval().iter().take(64).collect();
    let mse = rollout_mse(&s.model, &cfg.model, &s.decoder, &cfg.decoder, &refs, MAX_ROLLOUT, 0)?;
    for (k, m) in mse.iter().enumerate() {
        println!("step {}: mse {m:.4}", k + 1);
    }
    Ok(())
}
