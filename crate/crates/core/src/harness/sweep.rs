//! Fixed learning-rate sweep with selection by slot-head probe MSE.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Real;
use crate::error::{Error, Result};
use crate::evaluation::{append_jsonl, Head};
use crate::harness::config::ExperimentConfig;
use crate::harness::train::{evaluate, train, DataSource, TrainOptions, TrainState};

pub const SWEEP_LRS: [f64; 5] = [1e-4, 2e-4, 3e-4, 4e-4, 5e-4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    /// Base learning rate (before batch scaling).
    pub lr: f64,
    /// Slot-head MSE used for selection; absent for diverged runs.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Index of the lowest finite score; ties go to the lower learning rate.
pub fn select_best(runs: &[SweepRun]) -> Result<usize> {
    runs.iter()
        .enumerate()
        .filter_map(|(i, r)| r.score.filter(|s| s.is_finite()).map(|s| (i, s, r.lr)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)))
        .map(|(i, ..)| i)
        .ok_or_else(|| Error::Diverged {
            step: 0,
            detail: "every learning rate in the sweep diverged".into(),
        })
}

pub struct SweepOutcome<T> {
    pub runs: Vec<SweepRun>,
    pub best: usize,
    pub state: TrainState<T>,
}

/// Selection score of a finished run: the training-window probe MSE for
/// on-the-fly data, the slot-head MSE over the training split otherwise.
pub fn selection_score<T: Real>(state: &TrainState<T>, data: &DataSource) -> Result<f64> {
    match data.train_split() {
        None => Ok(state.window_mse().0),
        Some(train) => {
            let records = evaluate(state, train)?;
            Ok(records
                .iter()
                .find(|r| r.head == Head::Slots)
                .map(|r| r.mse_mean)
                .unwrap_or(f64::NAN))
        }
    }
}

/// Train one run per learning rate in `lrs` (all other settings shared) and
/// keep the best. Runs that diverge are skipped with a warning.
pub fn lr_sweep<T: Real>(cfg: &ExperimentConfig, lrs: &[f64], out: Option<&Path>) -> Result<SweepOutcome<T>> {
    let data = DataSource::prepare(cfg)?;
    let mut runs = Vec::with_capacity(lrs.len());
    let mut states = Vec::with_capacity(lrs.len());
    for &lr in lrs {
        let mut run_cfg = cfg.clone();
        run_cfg.train.lr = lr;
        let opts = TrainOptions {
            out: out.map(|o| o.join(format!("lr_{lr:e}"))),
            ..TrainOptions::default()
        };
        let result = train::<T>(&run_cfg, &data, &opts).and_then(|o| {
            let score = selection_score(&o.state, &data)?;
            Ok((o.state, score))
        });
        match result {
            Ok((state, score)) if score.is_finite() => {
                log::info!("lr {lr:e}: slot-head mse {score:.6}");
                runs.push(SweepRun {
                    lr,
                    score: Some(score),
                    error: None,
                });
                states.push(Some(state));
            }
            Ok((_, score)) => {
                log::warn!("lr {lr:e}: excluded, score {score}");
                runs.push(SweepRun {
                    lr,
                    score: None,
                    error: Some(format!("score {score}")),
                });
                states.push(None);
            }
            Err(e @ Error::Diverged { .. }) | Err(e @ Error::NonFinite(_)) => {
                log::warn!("lr {lr:e}: excluded, {e}");
                runs.push(SweepRun {
                    lr,
                    score: None,
                    error: Some(e.to_string()),
                });
                states.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let best = select_best(&runs)?;
    if let Some(o) = out {
        append_jsonl(&o.join("sweep.jsonl"), &runs)?;
    }
    let state = states[best].take().expect("selected run has a state");
    Ok(SweepOutcome { runs, best, state })
}
