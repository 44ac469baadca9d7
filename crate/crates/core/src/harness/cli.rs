//! Command-line front end. Usage errors exit with 2, validation and runtime
//! failures with 1.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datasets::{generate_balls_dataset, generate_gridworld_dataset, write_dataset, DatasetKind};
use crate::diffcore::{checkpoint, DType, Real};
use crate::error::{Error, Result};
use crate::evaluation::{append_jsonl, plot_rollout, plot_sequence, rollout_mse, MAX_ROLLOUT};
use crate::harness::config::ExperimentConfig;
use crate::harness::gradcheck::{gradcheck_suite, EndToEnd};
use crate::harness::sweep::{lr_sweep, SWEEP_LRS};
use crate::harness::train::{train, write_report, DataSource, TrainOptions, TrainState, CHECKPOINT_DIR};
use crate::seeding::{derive_seed, EVAL};

#[derive(Parser, Debug)]
#[command(
    name = "setcon",
    version,
    about = "Set-contrastive object-centric video models: data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON experiment config; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry by dotted path, e.g. `model.num_slots=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::resolve(None, &overrides),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DatasetArg {
    Gridworld,
    Balls,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a dataset container.
    Generate {
        #[arg(long, value_enum)]
        dataset: Option<DatasetArg>,
        /// Total sequences, evaluation split included.
        #[arg(long)]
        num_sequences: Option<usize>,
        #[arg(long)]
        eval_sequences: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run and report held-out probe metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the run's checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Train one run per learning rate and keep the best.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe metrics of a trained run on its held-out split.
    Eval {
        /// Run directory or checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Where to append `metrics.jsonl`; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-step prediction without re-encoding: per-step MSE and figures.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = MAX_ROLLOUT)]
        steps: usize,
        /// Held-out sequences to score.
        #[arg(long, default_value_t = 64)]
        sequences: usize,
        /// Sequences to draw.
        #[arg(long, default_value_t = 4)]
        figures: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks; nonzero exit on any failure.
    Gradcheck {
        /// Random instances per primitive.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Also check the FM-MLP and random-initialization variants.
        #[arg(long)]
        all_variants: bool,
        /// Skip the end-to-end objectives.
        #[arg(long)]
        primitives_only: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attention, alpha and reconstruction grids from a checkpoint.
    Plot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        sequences: usize,
        #[arg(long, default_value_t = 8)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Accept a run directory (holding `checkpoint/`) or a checkpoint itself.
fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.join(checkpoint::MANIFEST).exists() {
        path.to_path_buf()
    } else {
        path.join(CHECKPOINT_DIR)
    }
}

fn run_dir(path: &Path) -> PathBuf {
    let ckpt = checkpoint_dir(path);
    if ckpt == path {
        path.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    } else {
        path.to_path_buf()
    }
}

fn stored_precision(path: &Path) -> Result<DType> {
    let manifest = checkpoint::read_manifest(&checkpoint_dir(path))?;
    Ok(manifest.tensors.first().map(|t| t.dtype).unwrap_or(DType::F64))
}

fn print_json<S: serde::Serialize>(records: &[S]) -> Result<()> {
    for r in records {
        println!("{}", serde_json::to_string(r)?);
    }
    Ok(())
}

fn generate(
    dataset: Option<DatasetArg>,
    num_sequences: Option<usize>,
    eval_sequences: Option<usize>,
    args: &ConfigArgs,
    out: &Path,
) -> Result<()> {
    let mut args = args.clone();
    if let Some(d) = dataset {
        let name = match d {
            DatasetArg::Gridworld => "gridworld",
            DatasetArg::Balls => "balls",
        };
        args.overrides.insert(0, format!("data.dataset={name}"));
    }
    if let Some(n) = num_sequences {
        args.overrides.push(format!("data.num_sequences={n}"));
    }
    if let Some(n) = eval_sequences {
        args.overrides.push(format!("data.eval_sequences={n}"));
    }
    let cfg = args.resolve()?;
    let d = &cfg.data;
    let ds = match d.dataset {
        DatasetKind::GridWorld => {
            generate_gridworld_dataset(cfg.seed, &d.gridworld_config(), d.num_sequences, d.eval_sequences)?
        }
        DatasetKind::Balls => generate_balls_dataset(cfg.seed, &d.balls_config(), d.num_sequences, d.eval_sequences)?,
    };
    write_dataset(&ds, out)?;
    println!(
        "wrote {} {} sequences ({} held out) to {}",
        ds.sequences.len(),
        ds.kind.name(),
        ds.eval().len(),
        out.display()
    );
    Ok(())
}

fn train_run<T: Real>(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<()> {
    let data = DataSource::prepare(cfg)?;
    let opts = TrainOptions {
        out: Some(out.to_path_buf()),
        resume: resume.then(|| out.join(CHECKPOINT_DIR)),
        stop_after: None,
    };
    let outcome = train::<T>(cfg, &data, &opts)?;
    let (ws, wp) = outcome.state.window_mse();
    println!(
        "trained {} steps; training-window probe mse: slots {ws:.6}, preds {wp:.6}",
        outcome.state.step
    );
    print_json(&write_report(&outcome.state, &data, out)?)
}

fn sweep_run<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = lr_sweep::<T>(cfg, &SWEEP_LRS, Some(out))?;
    print_json(&outcome.runs)?;
    println!("selected lr {:e}", outcome.runs[outcome.best].lr);
    let data = DataSource::prepare(&outcome.state.config)?;
    let best_dir = out.join(format!("lr_{:e}", outcome.runs[outcome.best].lr));
    print_json(&write_report(&outcome.state, &data, &best_dir)?)
}

fn eval_run<T: Real>(path: &Path, out: Option<&Path>) -> Result<()> {
    let state = TrainState::<T>::load(&checkpoint_dir(path))?;
    let data = DataSource::prepare(&state.config)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir(path));
    std::fs::create_dir_all(&out)?;
    print_json(&write_report(&state, &data, &out)?)
}

#[derive(serde::Serialize)]
struct RolloutRecord {
    step: usize,
    mse: f64,
}

fn rollout_run<T: Real>(path: &Path, steps: usize, sequences: usize, figures: usize, out: &Path) -> Result<()> {
    let state = TrainState::<T>::load(&checkpoint_dir(path))?;
    let cfg = &state.config;
    if steps == 0 || steps > MAX_ROLLOUT || steps + 2 > cfg.data.num_frames {
        return Err(Error::Config {
            key: "steps".into(),
            detail: format!(
                "horizon must be in 1..={} for {}-frame sequences",
                MAX_ROLLOUT.min(cfg.data.num_frames.saturating_sub(2)),
                cfg.data.num_frames
            ),
        });
    }
    let data = DataSource::prepare(cfg)?;
    let eval = data.eval();
    let refs: Vec<_> = eval.iter().take(sequences.max(1)).collect();
    let noise = derive_seed(cfg.seed, EVAL, u64::MAX);
    let mse = rollout_mse(
        &state.model,
        &cfg.model,
        &state.decoder,
        &cfg.decoder,
        &refs,
        steps,
        noise,
    )?;
    let records: Vec<RolloutRecord> = mse
        .iter()
        .enumerate()
        .map(|(i, &m)| RolloutRecord { step: i + 1, mse: m })
        .collect();
    std::fs::create_dir_all(out)?;
    append_jsonl(&out.join("rollout.jsonl"), &records)?;
    print_json(&records)?;
    for (i, seq) in eval.iter().take(figures).enumerate() {
        plot_rollout(
            &out.join(format!("rollout_{i}.png")),
            &state.model,
            &cfg.model,
            &state.decoder,
            &cfg.decoder,
            seq,
            steps,
            noise,
            8,
        )?;
    }
    Ok(())
}

fn plot_run<T: Real>(path: &Path, sequences: usize, scale: usize, out: &Path) -> Result<()> {
    let state = TrainState::<T>::load(&checkpoint_dir(path))?;
    let cfg = &state.config;
    let data = DataSource::prepare(cfg)?;
    std::fs::create_dir_all(out)?;
    let noise = derive_seed(cfg.seed, EVAL, u64::MAX);
    for (i, seq) in data.eval().iter().take(sequences).enumerate() {
        let path = out.join(format!("sequence_{i}.png"));
        plot_sequence(
            &path,
            &state.model,
            &cfg.model,
            &state.decoder,
            &cfg.decoder,
            seq,
            noise,
            scale,
        )?;
        println!("{}", path.display());
    }
    Ok(())
}

fn gradcheck(instances: usize, all_variants: bool, primitives_only: bool, seed: u64) -> Result<bool> {
    let e2e: &[EndToEnd] = match (primitives_only, all_variants) {
        (true, _) => &[],
        (false, false) => &EndToEnd::CORE,
        (false, true) => &EndToEnd::ALL,
    };
    let outcomes = gradcheck_suite(instances, e2e, seed)?;
    for o in &outcomes {
        println!(
            "{} {:<32} instances {:>3}  max rel error {:.3e}",
            if o.passed { "ok  " } else { "FAIL" },
            o.name,
            o.instances,
            o.max_rel_error
        );
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate {
            dataset,
            num_sequences,
            eval_sequences,
            config,
            out,
        } => generate(dataset, num_sequences, eval_sequences, &config, &out)?,
        Command::Train { config, out, resume } => {
            let cfg = config.resolve()?;
            match cfg.train.precision {
                DType::F32 => train_run::<f32>(&cfg, &out, resume)?,
                DType::F64 => train_run::<f64>(&cfg, &out, resume)?,
            }
        }
        Command::Sweep { config, out } => {
            let cfg = config.resolve()?;
            match cfg.train.precision {
                DType::F32 => sweep_run::<f32>(&cfg, &out)?,
                DType::F64 => sweep_run::<f64>(&cfg, &out)?,
            }
        }
        Command::Eval { checkpoint, out } => match stored_precision(&checkpoint)? {
            DType::F32 => eval_run::<f32>(&checkpoint, out.as_deref())?,
            DType::F64 => eval_run::<f64>(&checkpoint, out.as_deref())?,
        },
        Command::Rollout {
            checkpoint,
            steps,
            sequences,
            figures,
            out,
        } => match stored_precision(&checkpoint)? {
            DType::F32 => rollout_run::<f32>(&checkpoint, steps, sequences, figures, &out)?,
            DType::F64 => rollout_run::<f64>(&checkpoint, steps, sequences, figures, &out)?,
        },
        Command::Gradcheck {
            instances,
            all_variants,
            primitives_only,
            seed,
        } => {
            if !gradcheck(instances, all_variants, primitives_only, seed)? {
                return Ok(1);
            }
        }
        Command::Plot {
            checkpoint,
            sequences,
            scale,
            out,
        } => match stored_precision(&checkpoint)? {
            DType::F32 => plot_run::<f32>(&checkpoint, sequences, scale, &out)?,
            DType::F64 => plot_run::<f64>(&checkpoint, sequences, scale, &out)?,
        },
    }
    Ok(0)
}

/// Parse `argv` (program name first) and run; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(Error::Config { key, detail }) => {
            eprintln!("error: invalid configuration `{key}`: {detail}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
