//! `vcgeo selfcheck`: the full pipeline at toy scale. Generates tiny
//! sequences, regroups them, trains briefly, then infers, evaluates,
//! probes attention, and exports, reporting each stage as it passes.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use vcgeo_core::model::{Conditioning, ModelConfig};
use vcgeo_core::scenegen::SceneConfig;
use vcgeo_core::train::TrainConfig;

use crate::commands::{eval, export, gen, group, infer, probe, train};
use crate::common::RunConfig;
use crate::CliError;

#[derive(Args)]
pub struct SelfcheckArgs {
    /// Keep artifacts here instead of a temporary directory.
    #[arg(long)]
    pub keep: Option<PathBuf>,
}

fn toy_scene() -> SceneConfig {
    SceneConfig { width: 16, height: 16, frames: 3, ..SceneConfig::default() }
}

fn toy_run() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            layers: 1,
            heads: 2,
            dim: 16,
            patch: 4,
            mlp_ratio: 2,
            mode: Conditioning::SharedPos,
            rope_base: 100.0,
            rope_split: [4, 2, 2],
        },
        train: TrainConfig {
            steps: 8,
            lr: 1e-3,
            seed: 7,
            diffusion_steps: 50,
            checkpoint_every: 5,
            log_every: 2,
            ..TrainConfig::default()
        },
    }
}

pub fn run(args: &SelfcheckArgs) -> Result<(), CliError> {
    let (root, _guard) = match &args.keep {
        Some(path) => {
            fs::create_dir_all(path).with_context(|| format!("create {}", path.display()))?;
            (path.clone(), None)
        }
        None => {
            let dir = tempfile::tempdir().context("create temp dir")?;
            (dir.path().to_path_buf(), Some(dir))
        }
    };

    let scene_path = root.join("scene.toml");
    let scene_text = toml::to_string_pretty(&toy_scene())
        .map_err(|e| anyhow::anyhow!("scene serialize: {e}"))?;
    fs::write(&scene_path, scene_text)
        .with_context(|| format!("write {}", scene_path.display()))?;
    let config_path = root.join("run_config.toml");
    let config_text = toml::to_string_pretty(&toy_run())
        .map_err(|e| anyhow::anyhow!("run config serialize: {e}"))?;
    fs::write(&config_path, config_text)
        .with_context(|| format!("write {}", config_path.display()))?;

    let raw = root.join("raw");
    let grouped = root.join("grouped");
    let run_dir = root.join("run");
    let ckpt = run_dir.join("model.ckpt");
    let steps = toy_run().train.diffusion_steps;

    gen::run(&gen::GenArgs {
        out: raw.clone(),
        config: Some(scene_path),
        count: 3,
        seed: 11,
    })?;
    println!("ok: gen-data");

    group::run(&group::GroupArgs { data: raw, out: grouped.clone(), num_view: 2 })?;
    println!("ok: group");

    train::run(&train::TrainArgs {
        data: grouped.clone(),
        out: run_dir.clone(),
        config: Some(config_path),
        seed: None,
        steps: None,
        resume: None,
    })?;
    println!("ok: train");

    infer::run(&infer::InferArgs {
        ckpt: ckpt.clone(),
        data: grouped.clone(),
        id: None,
        out: root.join("pred"),
        attributes: "all".into(),
        steps: 1,
        diffusion_steps: steps,
        parameterization: "x0".into(),
        seed: 0,
    })?;
    println!("ok: infer");

    eval::run(&eval::EvalArgs {
        ckpt: ckpt.clone(),
        data: grouped.clone(),
        out: Some(root.join("eval.toml")),
        attributes: "all".into(),
        baseline_data: Some(grouped.clone()),
        diffusion_steps: steps,
    })?;
    println!("ok: eval");

    probe::run(&probe::ProbeArgs {
        ckpt: ckpt.clone(),
        data: grouped.clone(),
        id: None,
        attribute: "coord".into(),
        diffusion_steps: steps,
        out: None,
    })?;
    println!("ok: probe-attn");

    export::run(&export::ExportArgs {
        data: grouped,
        id: None,
        out: root.join("export"),
        ckpt: Some(ckpt),
        diffusion_steps: steps,
    })?;
    println!("ok: export");

    println!("selfcheck passed");
    Ok(())
}
