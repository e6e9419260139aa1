//! `vcgeo gen-data`: procedural dataset generation.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use vcgeo_core::scenegen::{generate_dataset, SceneConfig};

use crate::{usage, CliError};

#[derive(Args)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene configuration TOML; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of sequences to generate.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Base seed; sequence i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Recorded next to the manifest so a corpus can be regenerated bit for bit.
#[derive(Serialize, Deserialize)]
struct GenRecord {
    seed: u64,
    count: usize,
    scene: SceneConfig,
}

pub fn run(args: &GenArgs) -> Result<(), CliError> {
    if args.count == 0 {
        return Err(usage("--count must be positive"));
    }
    let scene = match &args.config {
        None => SceneConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
    };
    scene.validate().map_err(|e| usage(e.to_string()))?;

    let (manifest, ids) = generate_dataset(&scene, args.count, args.seed, &args.out)?;
    let record = GenRecord { seed: args.seed, count: args.count, scene };
    let record_path = args.out.join("generation.toml");
    let text = toml::to_string_pretty(&record)
        .map_err(|e| anyhow::anyhow!("generation record serialize: {e}"))?;
    fs::write(&record_path, text).with_context(|| format!("write {}", record_path.display()))?;

    println!("wrote {} sequences to {}", ids.len(), manifest.display());
    Ok(())
}
