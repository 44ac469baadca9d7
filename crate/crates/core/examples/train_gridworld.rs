//! A short SetCon run on GridWorld through the library API, then held-out
//! probe metrics.
//!
//! cargo run --release --example train_gridworld -- [steps]

use setcon::harness::{evaluate, train, DataSource, ExperimentConfig, TrainOptions};

fn main() -> setcon::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps = std::env::args().nth(1).unwrap_or_else(|| "300".into());
    let cfg = ExperimentConfig::resolve(None, &[format!("train.steps={steps}"), "train.batch_size=32".into()])?;
    let data = DataSource::prepare(&cfg)?;
    let run = train::<f32>(&cfg, &data, &TrainOptions::default())?;
    let (ws, wp) = run.state.window_mse();
    println!("training-window probe mse: s_t {ws:.4}, p_t {wp:.4}");
    for r in evaluate(&run.state, data.eval())? {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(())
}
