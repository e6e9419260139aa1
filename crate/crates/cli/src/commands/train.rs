//! `vcgeo train`: optimize the denoiser on a dataset, with periodic
//! checkpoints, a JSONL step log, and a reproducibility manifest.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use vcgeo_core::model::Model;
use vcgeo_core::train::{load_train_checkpoint, save_train_checkpoint, train_loop, AdamW};

use crate::common::{load_samples, manifest_path, sha256_file, RunConfig, RunManifest, StepLogger};
use crate::{usage, CliError};

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, step log, and run manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration TOML with [model] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured total step budget.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a training checkpoint up to the step budget.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        rc.train.seed = seed;
    }
    if let Some(steps) = args.steps {
        rc.train.steps = steps;
    }
    rc.validate()?;

    let (mut model, mut opt, start) = match &args.resume {
        Some(ckpt) => {
            // The checkpoint defines the architecture and the RNG stream; a
            // conflicting request is an error rather than a silent pick.
            let (model, opt, meta) = load_train_checkpoint(ckpt, &rc.train)?;
            if args.config.is_some() && rc.model != meta.config {
                return Err(usage("config [model] disagrees with the resumed checkpoint"));
            }
            if args.seed.is_some() && rc.train.seed != meta.train_seed {
                return Err(usage("a resumed run keeps the seed stored in its checkpoint"));
            }
            rc.model = meta.config;
            rc.train.seed = meta.train_seed;
            (model, opt, meta.trained_steps)
        }
        None => {
            let model = Model::init(rc.model, rc.train.seed)?;
            let opt = AdamW::new(&rc.train, &model.params);
            (model, opt, 0)
        }
    };
    let total = rc.train.steps;
    if start > total {
        return Err(usage(format!(
            "checkpoint already holds {start} steps, the budget is {total}"
        )));
    }

    fs::create_dir_all(&args.out).with_context(|| format!("create {}", args.out.display()))?;
    let samples = load_samples(&args.data, &rc.train.attributes)?;
    println!("training on {} sequences for steps {}..={total}", samples.len(), start + 1);

    let mut log = StepLogger::open(
        &args.out.join("train_log.jsonl"),
        args.resume.is_some(),
        rc.train.log_every,
        total,
    )?;
    let ckpt_path = args.out.join("model.ckpt");
    let mut done = start;
    while done < total {
        let next = match rc.train.checkpoint_every {
            0 => total,
            every => ((done / every + 1) * every).min(total),
        };
        train_loop(&mut model, &mut opt, &samples, &rc.train, done, next - done, |stats| {
            log.log(stats)
        })?;
        done = next;
        save_train_checkpoint(&ckpt_path, &mut model, &mut opt, rc.train.seed)?;
        if rc.train.checkpoint_every > 0 && done < total {
            let snapshot = args.out.join(format!("ckpt_{done:07}.ckpt"));
            fs::copy(&ckpt_path, &snapshot)
                .with_context(|| format!("copy {}", snapshot.display()))?;
        }
    }
    if done == start {
        // Zero steps to run; still leave a valid checkpoint in --out.
        save_train_checkpoint(&ckpt_path, &mut model, &mut opt, rc.train.seed)?;
    }
    log.finish()?;

    let manifest = RunManifest {
        command: "train".into(),
        data: args.data.display().to_string(),
        data_manifest_sha256: sha256_file(&manifest_path(&args.data))?,
        checkpoint: "model.ckpt".into(),
        trained_steps: done,
        model: rc.model,
        train: rc.train.clone(),
    };
    manifest.save(&args.out.join("run.toml"))?;
    println!("trained to step {done}; checkpoint at {}", ckpt_path.display());
    Ok(())
}
