//! `vlqa`: dataset generation, training, evaluation and ablation runs.
//!
//! Machine-readable results go to stdout (JSON lines) or to the `--out`
//! file; progress lines with wall-clock timings go to stderr, so the JSON
//! outputs are byte-identical across reruns with the same seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use vlqa_core::ablation;
use vlqa_core::checkpoint::Checkpoint;
use vlqa_core::config::{FusionMode, RunConfig};
use vlqa_core::dataset::{self, Dataset};
use vlqa_core::eval;
use vlqa_core::parallel::Execution;
use vlqa_core::train::{self, TrainState};
use vlqa_core::{Result, VlqaError};

#[derive(Parser)]
#[command(name = "vlqa", version, about = "Synthetic industrial visual question answering runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run config; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: dataset directory, checkpoint or report file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    fusion: Option<FusionMode>,
    /// Dataset directory, overriding `data.dir`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test JSONL splits and a manifest.
    Gen,
    /// Train a model and save a checkpoint.
    Train {
        /// Continue from this checkpoint's parameters, optimizer state and step.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override `optim.epochs` (total, counting epochs already run).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `test` or `train`.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Knock out modules one at a time and report their contributions.
    Ablate {
        /// Comma-separated knockout targets, or `all`.
        #[arg(long, default_value = "")]
        targets: String,
    },
}

struct Ctx {
    common: Common,
    started: Instant,
}

impl Ctx {
    fn exec(&self) -> Execution {
        if self.common.sequential {
            Execution::Sequential
        } else {
            Execution::Auto
        }
    }

    fn progress(&self, msg: &str) {
        eprintln!("[{:>8.2}s] {msg}", self.started.elapsed().as_secs_f64());
    }

    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply_overrides(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_overrides(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.common.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.common.fusion {
            cfg.fusion = f;
        }
        if let Some(d) = &self.common.data {
            cfg.data.dir = d.clone();
        }
    }
}

fn emit(value: &serde_json::Value) {
    println!("{value}");
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value)? + "\n";
    std::fs::write(path, text).map_err(|e| VlqaError::io(path, e))
}

fn cmd_gen(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.config()?;
    let dir = ctx.common.out.clone().unwrap_or_else(|| cfg.data.dir.clone());
    let d = &cfg.data;
    let (train, test, manifest) =
        dataset::write_synthetic(&dir, cfg.seed, d.train_count, d.test_count, d.noise, cfg.dims.channels)?;
    ctx.progress(&format!("wrote {} + {} samples to {}", train.len(), test.len(), dir.display()));
    emit(&json!({
        "command": "gen",
        "dir": dir,
        "seed": cfg.seed,
        "noise": d.noise,
        "train": train.len(),
        "test": test.len(),
        "categories": manifest.categories,
        "train_histogram": dataset::category_histogram(&train, &manifest),
        "test_histogram": dataset::category_histogram(&test, &manifest),
    }));
    Ok(())
}

fn cmd_train(ctx: &Ctx, resume: Option<&Path>, epochs: Option<usize>) -> Result<()> {
    let (mut cfg, resumed) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut cfg = ck.config.clone();
            ctx.apply_overrides(&mut cfg);
            (cfg, Some(ck))
        }
        None => (ctx.config()?, None),
    };
    if let Some(e) = epochs {
        cfg.optim.epochs = e;
    }
    cfg.validate()?;
    let out = ctx.common.out.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
    let data = Dataset::load(&cfg.data.dir)?;
    let (mut model, mut state) = match &resumed {
        Some(ck) => {
            if ck.config.fusion != cfg.fusion || ck.config.dims != cfg.dims || ck.config.seed != cfg.seed {
                return Err(VlqaError::Config(
                    "--seed and --fusion cannot change when resuming a checkpoint".into(),
                ));
            }
            ck.restore(&data.manifest)?
        }
        None => {
            let m = vlqa_core::model::Model::from_config(&cfg, &data.manifest)?;
            let s = TrainState::new(&m);
            (m, s)
        }
    };
    ctx.progress(&format!(
        "training {} on {} samples from step {}",
        cfg.fusion,
        data.train.len(),
        state.step
    ));
    train::train(
        &mut model,
        &mut state,
        &data.train,
        &data.test,
        &cfg.optim,
        cfg.seed,
        ctx.exec(),
        |e| {
            emit(&serde_json::to_value(e).expect("epoch log serializes"));
            ctx.progress(&format!("epoch {} loss {:.4}", e.epoch, e.loss));
        },
    )?;
    Checkpoint::capture(&model, &cfg, &state).save(&out)?;
    emit(&json!({
        "command": "train",
        "checkpoint": out,
        "step": state.step,
        "epoch": state.epoch,
    }));
    Ok(())
}

fn cmd_eval(ctx: &Ctx, checkpoint: &Path, split: &str) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(d) = &ctx.common.data {
        cfg.data.dir = d.clone();
    }
    let data = Dataset::load(&cfg.data.dir)?;
    let samples = match split {
        "test" => &data.test,
        "train" => &data.train,
        other => return Err(VlqaError::Config(format!("unknown split {other:?} (expected test or train)"))),
    };
    let (model, _) = ck.restore(&data.manifest)?;
    let report = eval::evaluate(&model, samples, &data.manifest, cfg.gamma, ctx.exec())?;
    let out = ctx.common.out.clone().unwrap_or_else(|| PathBuf::from("eval.json"));
    write_json(&out, serde_json::to_value(&report)?)?;
    print!("{}", eval::render_table(&report));
    ctx.progress(&format!("report written to {}", out.display()));
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, targets: &str) -> Result<()> {
    let cfg = ctx.config()?;
    let targets = if targets.trim() == "all" {
        vlqa_core::model::Knockout::ALL.to_vec()
    } else {
        ablation::parse_targets(targets)?
    };
    let data = Dataset::load(&cfg.data.dir)?;
    let report = ablation::run(&cfg, &data, &targets, ctx.exec(), |k, e| {
        let who = k.map_or("full".to_string(), |k| format!("-{k}"));
        ctx.progress(&format!("{who} epoch {} loss {:.4}", e.epoch, e.loss));
    })?;
    let out = ctx.common.out.clone().unwrap_or_else(|| PathBuf::from("ablation.json"));
    write_json(&out, serde_json::to_value(&report)?)?;
    print!("{}", ablation::render_table(&report));
    ctx.progress(&format!("report written to {}", out.display()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        common: cli.common,
        started: Instant::now(),
    };
    let result = match &cli.command {
        Command::Gen => cmd_gen(&ctx),
        Command::Train { resume, epochs } => cmd_train(&ctx, resume.as_deref(), *epochs),
        Command::Eval { checkpoint, split } => cmd_eval(&ctx, checkpoint, split),
        Command::Ablate { targets } => cmd_ablate(&ctx, targets),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
