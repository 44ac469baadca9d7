//! Experiment configuration: nested JSON sections merged over defaults,
//! `key=value` overrides by dotted path, and validation that names the
//! offending key.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::{BallsConfig, CollisionModel, DatasetKind, GridWorldConfig};
use crate::diffcore::{AdamConfig, DType};
use crate::error::{Error, Result};
use crate::evaluation::DecoderConfig;
use crate::model::{ModelConfig, SlotInit};
use crate::objectives::{ContrastiveConfig, Denominator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Frame height and width.
    pub size: usize,
    pub num_frames: usize,
    pub num_colors: usize,
    /// Defaults to `num_colors`.
    pub num_objects: Option<usize>,
    /// Bouncing Balls physics.
    pub radius: f64,
    pub speed: f64,
    pub collision: CollisionModel,
    /// Pre-generated container; generated from the seed when absent.
    pub path: Option<String>,
    /// Total stored sequences, evaluation split included.
    pub num_sequences: usize,
    /// The last `eval_sequences` of the stored set; for on-the-fly GridWorld
    /// the size of the held-out split drawn from its own stream.
    pub eval_sequences: usize,
}

impl DataConfig {
    pub fn gridworld() -> Self {
        DataConfig {
            dataset: DatasetKind::GridWorld,
            size: 5,
            num_frames: 8,
            num_colors: 3,
            num_objects: None,
            radius: 0.1,
            speed: 0.06,
            collision: CollisionModel::Mirror,
            path: None,
            num_sequences: 1000,
            eval_sequences: 128,
        }
    }

    pub fn balls() -> Self {
        DataConfig {
            dataset: DatasetKind::Balls,
            size: 32,
            num_frames: 12,
            ..DataConfig::gridworld()
        }
    }

    pub fn objects(&self) -> usize {
        self.num_objects.unwrap_or(self.num_colors)
    }

    pub fn gridworld_config(&self) -> GridWorldConfig {
        GridWorldConfig {
            size: self.size,
            num_frames: self.num_frames,
            num_objects: self.objects(),
            num_colors: self.num_colors,
        }
    }

    pub fn balls_config(&self) -> BallsConfig {
        BallsConfig {
            size: self.size,
            num_frames: self.num_frames,
            num_balls: self.objects(),
            radius: self.radius,
            speed: self.speed,
            collision: self.collision,
            palette_offset: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Setcon,
    Slotwise,
    Reconstruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub tau: f64,
    pub denominator: Denominator,
}

impl LossConfig {
    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            denominator: self.denominator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Base learning rate; the effective rate is `lr · batch_size / 256`.
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub precision: DType,
    /// Trailing steps whose probe MSE forms the run's score; `steps / 20`
    /// when absent.
    pub eval_window: Option<u64>,
    pub log_every: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 64,
            steps: 5000,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            precision: DType::F32,
            eval_window: None,
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn window(&self) -> u64 {
        self.eval_window.unwrap_or(self.steps / 20).clamp(1, self.steps.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub decoder: DecoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataConfig::gridworld(),
            model: ModelConfig::default(),
            decoder: DecoderConfig::default(),
            loss: LossConfig {
                kind: LossKind::Setcon,
                tau: 0.5,
                denominator: Denominator::Literal,
            },
            train: TrainConfig::default(),
        }
    }
}

/// Effective learning rate `lr · batch_size / 256`.
pub fn resolve_lr(base_lr: f64, batch_size: usize) -> Result<f64> {
    if !(base_lr > 0.0) || !base_lr.is_finite() {
        return Err(Error::Argument(format!(
            "learning rate must be positive, got {base_lr}"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    Ok(base_lr * batch_size as f64 / 256.0)
}

fn invalid(key: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        detail: detail.into(),
    }
}

fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &key)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(invalid(&key, "unknown key")),
                }
            }
            Ok(())
        }
        _ => Err(invalid(path, "expected an object")),
    }
}

impl ExperimentConfig {
    /// Bouncing Balls desk-scale defaults.
    pub fn balls() -> Self {
        ExperimentConfig {
            data: DataConfig::balls(),
            decoder: DecoderConfig { width: 32, layers: 3 },
            train: TrainConfig {
                batch_size: 32,
                steps: 10_000,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    /// Defaults for `dataset`, with `json` (possibly partial) merged on top
    /// and then each `key=value` override applied.
    pub fn resolve(json: Option<&str>, overrides: &[String]) -> Result<Self> {
        let patch: Option<Value> = json.map(serde_json::from_str).transpose()?;
        let dataset = patch
            .as_ref()
            .and_then(|p| p.pointer("/data/dataset"))
            .cloned()
            .or_else(|| {
                overrides.iter().find_map(|o| {
                    o.strip_prefix("data.dataset=")
                        .map(|v| Value::String(v.trim_matches('"').into()))
                })
            });
        let base = match dataset.as_ref().and_then(Value::as_str) {
            Some("balls") => ExperimentConfig::balls(),
            _ => ExperimentConfig::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        if let Some(p) = &patch {
            merge(&mut value, p, "")?;
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::resolve(Some(&text), overrides)
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.size == 0 {
            return Err(invalid("data.size", "must be at least 1"));
        }
        if d.num_frames < 3 {
            return Err(invalid(
                "data.num_frames",
                "need at least 3 frames for a prediction target",
            ));
        }
        if d.num_colors == 0 {
            return Err(invalid("data.num_colors", "must be at least 1"));
        }
        if d.objects() == 0 || d.objects() > 255 {
            return Err(invalid("data.num_objects", "must be in 1..=255"));
        }
        if d.dataset == DatasetKind::GridWorld && d.objects() > 4 * d.size * d.size {
            return Err(invalid(
                "data.num_objects",
                "more objects than (position, direction) states",
            ));
        }
        if d.dataset == DatasetKind::Balls {
            if !(d.radius > 0.0 && d.radius < 0.5) {
                return Err(invalid("data.radius", "must lie in (0, 0.5)"));
            }
            if !(d.speed >= 0.0 && d.speed.is_finite()) {
                return Err(invalid("data.speed", "must be finite and nonnegative"));
            }
        }
        if d.eval_sequences > d.num_sequences {
            return Err(invalid("data.eval_sequences", "exceeds data.num_sequences"));
        }
        self.model.validate()?;
        if self.model.slot_init == SlotInit::Random && self.model.encoder != crate::model::Encoder::SlotAttention {
            return Err(invalid(
                "model.slot_init",
                "random initialization needs the slot attention encoder",
            ));
        }
        if self.decoder.width == 0 || self.decoder.layers == 0 {
            return Err(invalid("decoder.width", "decoder needs nonzero width and depth"));
        }
        if !(self.loss.tau > 0.0 && self.loss.tau.is_finite()) {
            return Err(invalid("loss.tau", "temperature must be positive"));
        }
        let t = &self.train;
        resolve_lr(t.lr, t.batch_size).map_err(|e| {
            let key = if t.batch_size == 0 {
                "train.batch_size"
            } else {
                "train.lr"
            };
            invalid(key, e.to_string())
        })?;
        if t.steps == 0 {
            return Err(invalid("train.steps", "must be at least 1"));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(invalid("train.weight_decay", "must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&t.beta1) {
            return Err(invalid("train.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&t.beta2) {
            return Err(invalid("train.beta2", "must lie in [0, 1)"));
        }
        if !(t.adam_eps > 0.0) {
            return Err(invalid("train.adam_eps", "must be positive"));
        }
        if t.log_every == 0 {
            return Err(invalid("train.log_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn effective_lr(&self) -> f64 {
        resolve_lr(self.train.lr, self.train.batch_size).expect("validated config")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.effective_lr(),
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.adam_eps,
            weight_decay: self.train.weight_decay,
        }
    }
}

/// Set the entry at a dotted `key` from a `key=value` string. The value is
/// read as JSON when it parses, otherwise as a plain string.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let value = serde_json::from_str::<Value>(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut slot = config;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| invalid(key, "unknown key"))?;
    }
    if slot.is_object() {
        return Err(invalid(key, "cannot replace a whole section"));
    }
    *slot = value;
    Ok(())
}
