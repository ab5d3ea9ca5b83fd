//! `mcvqa` command line: synthetic data generation, two-stage training,
//! evaluation, gradient checking, separation diagnostics, and the ablation
//! suite. A dataset directory holds `data.jsonl` plus `vocab.txt`.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mcvqa::corpus::{load_jsonl, save_jsonl, split_train_val, ClipExample};
use mcvqa::gradcheck::{full_model_check, per_op_checks};
use mcvqa::model::load_checkpoint;
use mcvqa::synth::{generate_synthetic, SynthConfig, SynthProfile};
use mcvqa::train::{
    ablation_suite, configure_threads, evaluate, run_pipeline, separation_over, train_stage,
    Stage, TrainConfig,
};
use mcvqa::vocab::Vocabulary;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "mcvqa", about = "Multiple-choice video QA on synthetic clips", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip dataset (data.jsonl + vocab.txt).
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n_clips: usize,
        /// text_only | visual_local | mixed
        #[arg(long)]
        profile: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised question-prediction pre-training stage.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Main video-QA training stage.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to initialize from (e.g. a pre-training final).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: QA accuracy, mIoU, ASA.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train | val | all
        #[arg(long, default_value = "val")]
        split: String,
        /// Training config the checkpoint was produced with (defaults to the
        /// toy preset).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Gradient checks: one per graph op, or the whole model end to end.
    Gradcheck {
        /// Check a single named op (see --op list).
        #[arg(long)]
        op: Option<String>,
        /// Check the full model with all three losses on one example.
        #[arg(long)]
        full_model: bool,
    },
    /// Nearest-negative separation of pooled hypothesis representations.
    ReportDistances {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the eight-row Table-4-style ablation over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed list, e.g. 1,2,3
        #[arg(long)]
        seeds: String,
    },
}

fn load_dataset(dir: &Path) -> anyhow::Result<(Vocabulary, Vec<ClipExample>)> {
    let vocab = Vocabulary::load(&dir.join("vocab.txt"))
        .with_context(|| format!("loading {}", dir.join("vocab.txt").display()))?;
    let clips = load_jsonl(&dir.join("data.jsonl"), &vocab)
        .with_context(|| format!("loading {}", dir.join("data.jsonl").display()))?;
    Ok((vocab, clips))
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => Ok(TrainConfig::toy(0)),
    }
}

fn checked_params(
    ckpt: &Path,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
) -> anyhow::Result<(mcvqa::model::ParamSet<f32>, mcvqa::model::ModelConfig)> {
    let (params, stored_hash) = load_checkpoint(ckpt)?;
    let mcfg = cfg.model_config(vocab.len());
    let expect = params.arch_hash(&mcfg);
    if expect != stored_hash {
        bail!(
            "checkpoint architecture hash {stored_hash} does not match the \
             configured model ({expect}); pass the config the checkpoint was trained with"
        );
    }
    Ok((params, mcfg))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    configure_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            seed,
            n_clips,
            profile,
            out,
        } => {
            let profile: SynthProfile = profile.parse().map_err(anyhow::Error::msg)?;
            let (vocab, clips) =
                generate_synthetic(seed, n_clips, profile, &SynthConfig::default());
            std::fs::create_dir_all(&out)?;
            vocab.save(&out.join("vocab.txt"))?;
            save_jsonl(&out.join("data.jsonl"), &clips, &vocab)?;
            println!(
                "wrote {} clips and {} vocabulary tokens to {}",
                clips.len(),
                vocab.len(),
                out.display()
            );
        }
        Command::Pretrain { data, config, out } => {
            let (vocab, clips) = load_dataset(&data)?;
            let cfg = load_config(Some(&config))?;
            let (train, val) = split_train_val(clips);
            std::fs::create_dir_all(&out)?;
            let run = train_stage(&cfg, Stage::Pretrain, &vocab, &train, &val, None, Some(&out))?;
            println!(
                "pretrain finished: {} epochs, final val acc {:.4}",
                run.report.epochs.len(),
                run.report.final_val_qa_acc
            );
        }
        Command::Train {
            data,
            config,
            init,
            out,
        } => {
            let (vocab, clips) = load_dataset(&data)?;
            let cfg = load_config(Some(&config))?;
            let (train, val) = split_train_val(clips);
            std::fs::create_dir_all(&out)?;
            let run = if let Some(ckpt) = init {
                let (params, _) = checked_params(&ckpt, &cfg, &vocab)?;
                train_stage(&cfg, Stage::Main, &vocab, &train, &val, Some(params), Some(&out))?
            } else {
                run_pipeline(&cfg, &vocab, &train, &val, Some(&out))?
            };
            println!(
                "train finished: {} epochs, final val acc {:.4}",
                run.report.epochs.len(),
                run.report.final_val_qa_acc
            );
        }
        Command::Eval {
            ckpt,
            data,
            split,
            config,
        } => {
            let (vocab, clips) = load_dataset(&data)?;
            let cfg = load_config(config.as_deref())?;
            let (params, mcfg) = checked_params(&ckpt, &cfg, &vocab)?;
            let (train, val) = split_train_val(clips);
            let subset = match split.as_str() {
                "train" => train,
                "val" => val,
                "all" => train.into_iter().chain(val).collect(),
                other => bail!("unknown split '{other}' (expected train, val, all)"),
            };
            let m = evaluate(&params, &mcfg, &subset)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Gradcheck { op, full_model } => {
            if full_model {
                let started = std::time::Instant::now();
                let err = full_model_check()?;
                println!(
                    "full-model max rel err {err:.3e} in {:.1}s",
                    started.elapsed().as_secs_f64()
                );
                if err >= 1e-4 {
                    bail!("full-model gradient check failed: {err:.3e} >= 1e-4");
                }
                return Ok(());
            }
            let checks = per_op_checks()?;
            let mut worst = 0.0f64;
            let mut matched = false;
            for (name, err) in &checks {
                if op.as_deref().is_some_and(|o| o != *name) {
                    continue;
                }
                matched = true;
                println!("{name}: max rel err {err:.3e}");
                worst = worst.max(*err);
            }
            if !matched {
                let names: Vec<&str> = checks.iter().map(|(n, _)| *n).collect();
                bail!("unknown op '{}'; available: {}", op.unwrap(), names.join(", "));
            }
            if worst >= 1e-6 {
                bail!("per-op gradient check failed: {worst:.3e} >= 1e-6");
            }
        }
        Command::ReportDistances { ckpt, data, config } => {
            let (vocab, clips) = load_dataset(&data)?;
            let cfg = load_config(config.as_deref())?;
            let (params, mcfg) = checked_params(&ckpt, &cfg, &vocab)?;
            let (_, val) = split_train_val(clips);
            let subset: Vec<ClipExample> =
                val.into_iter().take(cfg.diagnostic_subset).collect();
            if subset.is_empty() {
                bail!("validation split is empty");
            }
            let (euclid, cosine) = separation_over(&params, &mcfg, &subset)?;
            println!("epoch,lambda_cont,euclid_mean,cosine_mean,seed");
            println!("0,{},{euclid},{cosine},{}", cfg.lambda_cont, cfg.seed);
        }
        Command::Ablate { data, config, seeds } => {
            let (vocab, clips) = load_dataset(&data)?;
            let cfg = load_config(Some(&config))?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse().map_err(anyhow::Error::msg))
                .collect::<anyhow::Result<_>>()?;
            let (train, val) = split_train_val(clips);
            let rows = ablation_suite(&cfg, &vocab, &train, &val, &seeds)?;
            println!("{:<28} QA (Acc.)", "Models");
            for row in &rows {
                println!("{:<28} {}", row.label, row.cell());
            }
        }
    }
    Ok(())
}
