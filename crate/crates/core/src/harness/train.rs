//! Training loop, checkpoints and resume.
//!
//! A checkpoint is one parameter container holding the model, the decoder
//! and both Adam states under name prefixes, with the resolved config, the
//! step counter and the running evaluation window stored as metadata.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::datasets::{generate_balls_dataset, gridworld_sequence, read_dataset, Dataset, DatasetKind, VideoSequence};
use crate::diffcore::{adam_step, checkpoint, Graph, OptimizerState, ParameterTree, Real};
use crate::error::{Error, Result};
use crate::evaluation::{append_jsonl, evaluate_heads, init_decoder, probe_train_step, MetricRecord, ProbeStep};
use crate::harness::config::{ExperimentConfig, LossKind};
use crate::model::{batch_frames, forward_sequence, init_params};
use crate::objectives::{reconstruction_terms, setcon_loss, slotwise_loss};
use crate::seeding::{derive_seed, stream_rng, DATA, EVAL, INIT, SLOT_NOISE};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const METRICS: &str = "metrics.jsonl";

const MODEL: &str = "model/";
const DECODER: &str = "decoder/";
const ADAM: [&str; 4] = ["adam/model/m/", "adam/model/v/", "adam/decoder/m/", "adam/decoder/v/"];

/// Batches for training and sequences for evaluation.
pub enum DataSource {
    /// Fresh sequences per batch element, seeded by the global sample index.
    OnTheFly {
        root: u64,
        cfg: crate::datasets::GridWorldConfig,
        eval: Vec<VideoSequence>,
    },
    /// Batches drawn without replacement from the training split.
    Stored { root: u64, dataset: Dataset },
}

impl DataSource {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let d = &cfg.data;
        if let Some(path) = &d.path {
            let dataset = read_dataset(Path::new(path))?;
            let first = dataset.sequences.first().ok_or_else(|| Error::Config {
                key: "data.path".into(),
                detail: "container holds no sequences".into(),
            })?;
            if dataset.kind != d.dataset || first.height() != d.size || first.num_frames() != d.num_frames {
                return Err(Error::Config {
                    key: "data.path".into(),
                    detail: format!(
                        "container holds {} sequences of {}×{}×{}, config asks for {} {}×{}×{}",
                        dataset.kind.name(),
                        first.num_frames(),
                        first.height(),
                        first.width(),
                        d.dataset.name(),
                        d.num_frames,
                        d.size,
                        d.size
                    ),
                });
            }
            if dataset.train().len() < cfg.train.batch_size {
                return Err(Error::Config {
                    key: "train.batch_size".into(),
                    detail: format!("training split holds only {} sequences", dataset.train().len()),
                });
            }
            return Ok(DataSource::Stored {
                root: cfg.seed,
                dataset,
            });
        }
        match d.dataset {
            DatasetKind::GridWorld => {
                let gw = d.gridworld_config();
                let eval = (0..d.eval_sequences as u64)
                    .map(|i| gridworld_sequence(derive_seed(cfg.seed, EVAL, i), &gw))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DataSource::OnTheFly {
                    root: cfg.seed,
                    cfg: gw,
                    eval,
                })
            }
            DatasetKind::Balls => {
                let dataset = generate_balls_dataset(cfg.seed, &d.balls_config(), d.num_sequences, d.eval_sequences)?;
                if dataset.train().len() < cfg.train.batch_size {
                    return Err(Error::Config {
                        key: "train.batch_size".into(),
                        detail: format!("training split holds only {} sequences", dataset.train().len()),
                    });
                }
                Ok(DataSource::Stored {
                    root: cfg.seed,
                    dataset,
                })
            }
        }
    }

    /// The batch for `step`; a pure function of (root seed, step).
    pub fn batch(&self, step: u64, size: usize) -> Result<Vec<VideoSequence>> {
        match self {
            DataSource::OnTheFly { root, cfg, .. } => (0..size as u64)
                .map(|b| gridworld_sequence(derive_seed(*root, DATA, step * size as u64 + b), cfg))
                .collect(),
            DataSource::Stored { root, dataset } => {
                let train = dataset.train();
                let mut rng = stream_rng(*root, DATA, step);
                Ok(sample(&mut rng, train.len(), size)
                    .into_iter()
                    .map(|i| train[i].clone())
                    .collect())
            }
        }
    }

    /// Held-out sequences.
    pub fn eval(&self) -> &[VideoSequence] {
        match self {
            DataSource::OnTheFly { eval, .. } => eval,
            DataSource::Stored { dataset, .. } => dataset.eval(),
        }
    }

    /// The training split, when one exists.
    pub fn train_split(&self) -> Option<&[VideoSequence]> {
        match self {
            DataSource::OnTheFly { .. } => None,
            DataSource::Stored { dataset, .. } => Some(dataset.train()),
        }
    }
}

/// Mean probe MSE over the final `train.window()` steps of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowMetric {
    pub sum_slots: f64,
    pub sum_preds: f64,
    pub count: u64,
}

impl WindowMetric {
    fn push(&mut self, p: ProbeStep) {
        self.sum_slots += p.mse_slots;
        self.sum_preds += p.mse_preds;
        self.count += 1;
    }

    pub fn mse_slots(&self) -> f64 {
        self.sum_slots / self.count as f64
    }

    pub fn mse_preds(&self) -> f64 {
        self.sum_preds / self.count as f64
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub config: ExperimentConfig,
    /// Completed optimization steps.
    pub step: u64,
    pub model: ParameterTree<T>,
    pub decoder: ParameterTree<T>,
    pub opt_model: OptimizerState<T>,
    pub opt_decoder: OptimizerState<T>,
    pub window: WindowMetric,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: ExperimentConfig,
    step: u64,
    adam_model_step: u64,
    adam_decoder_step: u64,
    window: WindowMetric,
}

impl<T: Real> TrainState<T> {
    pub fn fresh(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = (cfg.data.size, cfg.data.size);
        let model = init_params::<T>(&cfg.model, h, w, derive_seed(cfg.seed, INIT, 0))?;
        let decoder = init_decoder::<T>(&cfg.decoder, cfg.model.slot_dim, derive_seed(cfg.seed, INIT, 1))?;
        let adam = cfg.adam();
        Ok(TrainState {
            config: cfg.clone(),
            step: 0,
            opt_model: OptimizerState::new(&model, adam),
            opt_decoder: OptimizerState::new(&decoder, adam),
            model,
            decoder,
            window: WindowMetric::default(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut tree = ParameterTree::new();
        tree.extend_prefixed(MODEL, &self.model)?;
        tree.extend_prefixed(DECODER, &self.decoder)?;
        let moments = [
            &self.opt_model.m,
            &self.opt_model.v,
            &self.opt_decoder.m,
            &self.opt_decoder.v,
        ];
        for (prefix, m) in ADAM.iter().zip(moments) {
            tree.extend_prefixed(prefix, m)?;
        }
        let meta = CheckpointMeta {
            config: self.config.clone(),
            step: self.step,
            adam_model_step: self.opt_model.step,
            adam_decoder_step: self.opt_decoder.step,
            window: self.window,
        };
        // Write beside the target and swap, so an interrupted save leaves the
        // previous checkpoint intact.
        let staging = dir.with_extension("partial");
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        checkpoint::save(&staging, &tree, serde_json::to_value(meta)?)?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&staging, dir)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (tree, meta) = checkpoint::load::<T>(dir)?;
        let meta: CheckpointMeta = serde_json::from_value(meta).map_err(|e| Error::Format {
            path: dir.join(checkpoint::MANIFEST),
            position: 0,
            detail: format!("checkpoint metadata: {e}"),
        })?;
        meta.config.validate()?;
        let model = tree.strip_prefix(MODEL);
        let decoder = tree.strip_prefix(DECODER);
        let adam = meta.config.adam();
        let [mm, mv, dm, dv] = ADAM.map(|p| tree.strip_prefix(p));
        let opt_model = OptimizerState {
            step: meta.adam_model_step,
            m: mm,
            v: mv,
            config: adam,
        };
        let opt_decoder = OptimizerState {
            step: meta.adam_decoder_step,
            m: dm,
            v: dv,
            config: adam,
        };
        let expected = TrainState::<T>::fresh(&meta.config)?;
        for (got, want) in [
            (&model, &expected.model),
            (&decoder, &expected.decoder),
            (&opt_model.m, &expected.model),
            (&opt_model.v, &expected.model),
            (&opt_decoder.m, &expected.decoder),
            (&opt_decoder.v, &expected.decoder),
        ] {
            got.check_congruent(want)?;
        }
        Ok(TrainState {
            config: meta.config,
            step: meta.step,
            model,
            decoder,
            opt_model,
            opt_decoder,
            window: meta.window,
        })
    }

    /// Slot-head and prediction-head window MSE of the probe.
    pub fn window_mse(&self) -> (f64, f64) {
        (self.window.mse_slots(), self.window.mse_preds())
    }
}

/// One line of `train_log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        loss: f64,
        lr: f64,
        wall_time: f64,
        probe_mse_slots: f64,
        probe_mse_preds: f64,
    },
    /// Points at the metrics file written at this step.
    Eval { step: u64, report: String },
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Run directory for the checkpoint and logs; nothing is written when absent.
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
    /// Stop (and checkpoint) after this many completed steps.
    pub stop_after: Option<u64>,
}

pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub log: Vec<LogRecord>,
}

fn check_finite<T: Real>(tree: &ParameterTree<T>, step: u64, what: &str) -> Result<()> {
    if tree.all_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("non-finite {what}"),
        })
    }
}

/// One optimization step on `frames`; returns the loss and the probe MSEs
/// measured before the update.
fn train_step<T: Real>(
    state: &mut TrainState<T>,
    frames: &crate::diffcore::Tensor<T>,
    noise_seed: u64,
) -> Result<(f64, ProbeStep)> {
    let cfg = state.config.clone();
    let step = state.step;
    let mut g = Graph::new();
    let p = state.model.bind(&mut g);
    let x = g.constant(frames.clone());
    let out = forward_sequence(&mut g, &p, &cfg.model, x, noise_seed)?;
    let contrastive = cfg.loss.contrastive();
    match cfg.loss.kind {
        LossKind::Setcon | LossKind::Slotwise => {
            let loss = if cfg.loss.kind == LossKind::Setcon {
                setcon_loss(&mut g, out.zs, out.zp, &contrastive)?
            } else {
                slotwise_loss(&mut g, out.slots, out.preds, &contrastive)?
            };
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss is {value}"),
                });
            }
            let grads = g.backward(loss)?;
            let grads = state.model.gradients(&p, &grads)?;
            check_finite(&grads, step, "model gradient")?;
            let slots = g.value(out.slots).clone();
            let preds = g.value(out.preds).clone();
            drop(g);
            adam_step(&mut state.model, &grads, &mut state.opt_model)?;
            check_finite(&state.model, step, "model parameters")?;
            let probe = probe_train_step(
                &mut state.decoder,
                &mut state.opt_decoder,
                &cfg.decoder,
                &slots,
                &preds,
                frames,
            )?;
            check_finite(&state.decoder, step, "decoder parameters")?;
            Ok((value, probe))
        }
        LossKind::Reconstruction => {
            let dp = state.decoder.bind(&mut g);
            let (ms, mp) = reconstruction_terms(&mut g, &dp, &cfg.decoder, &out, x)?;
            let loss = g.add(ms, mp)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss is {value}"),
                });
            }
            let probe = ProbeStep {
                mse_slots: g.value(ms).item().as_f64(),
                mse_preds: g.value(mp).item().as_f64(),
            };
            let grads = g.backward(loss)?;
            let gm = state.model.gradients(&p, &grads)?;
            let gd = state.decoder.gradients(&dp, &grads)?;
            check_finite(&gm, step, "model gradient")?;
            check_finite(&gd, step, "decoder gradient")?;
            drop(g);
            adam_step(&mut state.model, &gm, &mut state.opt_model)?;
            adam_step(&mut state.decoder, &gd, &mut state.opt_decoder)?;
            check_finite(&state.model, step, "model parameters")?;
            Ok((value, probe))
        }
    }
}

/// Train from a fresh initialization or a checkpoint. Batches and slot
/// noise depend only on (seed, step), so a resumed run continues the exact
/// data stream of an uninterrupted one.
pub fn train<T: Real>(cfg: &ExperimentConfig, data: &DataSource, opts: &TrainOptions) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut state = match &opts.resume {
        Some(dir) => {
            let s = TrainState::<T>::load(dir)?;
            if s.config != *cfg {
                return Err(Error::Config {
                    key: "config".into(),
                    detail: "checkpoint was written under a different configuration".into(),
                });
            }
            s
        }
        None => TrainState::fresh(cfg)?,
    };
    if let Some(out) = &opts.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("config.json"), cfg.render())?;
    }
    let ckpt_dir = opts.out.as_ref().map(|o| o.join(CHECKPOINT_DIR));
    let log_path = opts.out.as_ref().map(|o| o.join(TRAIN_LOG));
    let t = &cfg.train;
    let end = opts.stop_after.map_or(t.steps, |s| s.min(t.steps));
    let window_start = t.steps - t.window();
    let lr = cfg.effective_lr();
    let progress_every = (t.steps / 20).max(1);
    let started = Instant::now();
    let mut log = Vec::new();
    let mut pending = Vec::new();

    log::info!(
        "training {} / {:?} on {} for {} steps (batch {}, lr {lr:e}, {:?})",
        serde_json::to_string(&cfg.loss.kind)?,
        cfg.model.encoder,
        cfg.data.dataset.name(),
        t.steps,
        t.batch_size,
        T::DTYPE
    );
    while state.step < end {
        let step = state.step;
        let batch = data.batch(step, t.batch_size)?;
        let refs: Vec<&VideoSequence> = batch.iter().collect();
        let frames = batch_frames::<T>(&refs)?;
        let (loss, probe) = match train_step(&mut state, &frames, derive_seed(cfg.seed, SLOT_NOISE, step)) {
            Ok(v) => v,
            Err(e) => {
                if let Some(path) = &log_path {
                    append_jsonl(path, &pending)?;
                }
                return Err(e);
            }
        };
        if step >= window_start {
            state.window.push(probe);
        }
        state.step += 1;
        let done = state.step == end;
        if state.step % t.log_every == 0 || done {
            let rec = LogRecord::Step {
                step: state.step,
                loss,
                lr,
                wall_time: started.elapsed().as_secs_f64(),
                probe_mse_slots: probe.mse_slots,
                probe_mse_preds: probe.mse_preds,
            };
            pending.push(rec.clone());
            log.push(rec);
        }
        if state.step % progress_every == 0 || done {
            log::info!(
                "step {}/{}: loss {loss:.5} probe mse s {:.5} p {:.5} ({:.1}s)",
                state.step,
                t.steps,
                probe.mse_slots,
                probe.mse_preds,
                started.elapsed().as_secs_f64()
            );
        }
        let checkpoint_now = t.checkpoint_every > 0 && state.step % t.checkpoint_every == 0;
        if checkpoint_now || done {
            if let Some(path) = &log_path {
                append_jsonl(path, &pending)?;
                pending.clear();
            }
            if let Some(dir) = &ckpt_dir {
                state.save(dir)?;
            }
        }
    }
    Ok(TrainOutcome { state, log })
}

/// Probe metrics on `sequences`; ARI only where ground-truth masks carry
/// object identity (Bouncing Balls).
pub fn evaluate<T: Real>(state: &TrainState<T>, sequences: &[VideoSequence]) -> Result<Vec<MetricRecord>> {
    let cfg = &state.config;
    evaluate_heads(
        &state.model,
        &cfg.model,
        Some(&state.decoder),
        &cfg.decoder,
        sequences,
        cfg.data.dataset == DatasetKind::Balls,
        derive_seed(cfg.seed, EVAL, u64::MAX),
        32,
    )
}

/// Evaluate on the held-out split and append the report to `metrics.jsonl`
/// and a pointer to it to the training log.
pub fn write_report<T: Real>(state: &TrainState<T>, data: &DataSource, out: &Path) -> Result<Vec<MetricRecord>> {
    let records = evaluate(state, data.eval())?;
    append_jsonl(&out.join(METRICS), &records)?;
    append_jsonl(
        &out.join(TRAIN_LOG),
        &[LogRecord::Eval {
            step: state.step,
            report: METRICS.into(),
        }],
    )?;
    Ok(records)
}
