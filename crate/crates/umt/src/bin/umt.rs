//! Command-line front end: train either stage, score retrieval, run
//! ablations, or print the token-budget accounting. All heavy lifting
//! lives in the library.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use umt::pipeline::{
    retrieval, run_ablation, AblationAxis, MetricsLog, RunConfig, Stage, TokenAccount, Trainer,
};

#[derive(Parser)]
#[command(name = "umt", about = "Masked video pretraining with a frozen teacher", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand that needs a run config.
#[derive(Args)]
struct ConfigOpts {
    /// Named preset: desk-tiny, paper-b16-stage1 or paper-stage2-5m.
    #[arg(long, default_value = "desk-tiny")]
    preset: String,
    /// `key = value` overrides applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Mask pattern override: semantic, random or tube.
    #[arg(long)]
    mask: Option<String>,
    /// Video mask ratio override.
    #[arg(long)]
    mask_ratio: Option<f64>,
}

impl ConfigOpts {
    fn resolve(&self) -> umt::Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mask) = &self.mask {
            cfg.mask.kind = mask.parse()?;
        }
        if let Some(ratio) = self.mask_ratio {
            cfg.mask.video_ratio = ratio;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainOpts {
    /// Steps to run this invocation (default: the schedule's total).
    #[arg(long)]
    steps: Option<u64>,
    /// Directory for metrics and the final snapshot.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a snapshot instead of initializing fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Teacher-supervised masked pretraining of the student tower.
    Stage1 {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Multimodal training: alignment, contrast, matching, masked text.
    Stage2 {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        train: TrainOpts,
        /// Stage-one snapshot that seeds the student tower.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start the visual tower from random weights instead.
        #[arg(long)]
        allow_scratch: bool,
    },
    /// Text-video retrieval scores for a trained snapshot.
    Eval {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Trainer snapshot to score.
        #[arg(long)]
        snapshot: PathBuf,
        /// How many corpus items to embed.
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Train every variant along one axis and tabulate the losses.
    Ablate {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// mask-kind, mask-ratio, aligned-layers, objectives,
        /// attention or sampling.
        #[arg(long)]
        axis: String,
        #[arg(long, default_value_t = 30)]
        steps: u64,
    },
    /// Token and attention budgets for the configured geometry.
    Account {
        #[command(flatten)]
        cfg: ConfigOpts,
    },
}

fn train(mut trainer: Trainer, steps: Option<u64>, out: Option<&PathBuf>) -> umt::Result<()> {
    let total = trainer.cfg.opt.total_steps;
    let steps = steps.unwrap_or_else(|| total.saturating_sub(trainer.step()));
    let log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(MetricsLog::create(&dir.join("train.metrics"))?)
        }
        None => None,
    };
    let records = trainer.run(steps, log.as_ref())?;
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        println!("ran steps {}..={}", first.step, last.step);
        println!("first: {}", umt::pipeline::format_line(first));
        println!("last:  {}", umt::pipeline::format_line(last));
    }
    if let Some(dir) = out {
        let snap = dir.join("final.umtk");
        trainer.save(&snap)?;
        println!("snapshot written to {}", snap.display());
    }
    Ok(())
}

fn run() -> umt::Result<()> {
    match Cli::parse().command {
        Command::Stage1 { cfg, train: t } => {
            let cfg = cfg.resolve()?;
            let trainer = match &t.resume {
                Some(path) => Trainer::resume(cfg, path)?,
                None => Trainer::new_stage1(cfg)?,
            };
            train(trainer, t.steps, t.out.as_ref())
        }
        Command::Stage2 { cfg, train: t, init, allow_scratch } => {
            let mut cfg = cfg.resolve()?;
            if allow_scratch {
                cfg.allow_scratch_stage2 = true;
            }
            let trainer = match &t.resume {
                Some(path) => Trainer::resume(cfg, path)?,
                None => {
                    let (trainer, report) = Trainer::new_stage2(cfg, init.as_deref())?;
                    if !report.loaded.is_empty() {
                        println!(
                            "seeded {} tensors from the snapshot ({} skipped, {} left fresh)",
                            report.loaded.len(),
                            report.skipped.len(),
                            report.missing.len()
                        );
                    }
                    trainer
                }
            };
            train(trainer, t.steps, t.out.as_ref())
        }
        Command::Eval { cfg, snapshot, count } => {
            let cfg = cfg.resolve()?;
            let trainer = Trainer::resume(cfg, &snapshot)?;
            if trainer.stage() != Stage::Two {
                return Err(umt::Error::config(
                    "retrieval needs a multimodal (stage-two) snapshot",
                ));
            }
            let (video, text) = trainer.eval_embeddings(count)?;
            println!("{}", retrieval(&video, &text)?);
            Ok(())
        }
        Command::Ablate { cfg, axis, steps } => {
            let cfg = cfg.resolve()?;
            let axis: AblationAxis = axis.parse()?;
            print!("{}", run_ablation(&cfg, axis, steps)?);
            Ok(())
        }
        Command::Account { cfg } => {
            let cfg = cfg.resolve()?;
            let grid = cfg.student_grid()?;
            let video =
                TokenAccount::new(grid.frames, grid.tokens_per_frame(), cfg.mask.video_ratio)?;
            println!("video clips under the video mask ratio {}", cfg.mask.video_ratio);
            println!("{video}");
            let image = TokenAccount::new(1, grid.tokens_per_frame(), cfg.mask.image_ratio)?;
            println!();
            println!("single images under the image mask ratio {}", cfg.mask.image_ratio);
            println!("{image}");
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
