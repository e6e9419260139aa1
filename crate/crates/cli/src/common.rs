//! Plumbing shared by the subcommands: the run config file, run manifests,
//! step logging, dataset and checkpoint loading.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vcgeo_core::dataio::{Dataset, SequenceSample, MANIFEST_NAME};
use vcgeo_core::geometry::Attribute;
use vcgeo_core::model::{model_from_checkpoint, CheckpointMeta, Model, ModelConfig};
use vcgeo_core::train::{StepStats, TrainConfig};

use crate::{usage, CliError};

/// Everything a training run needs besides the data, loadable from one TOML
/// file with `[model]` and `[train]` tables. Missing fields take defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }
}

/// Written next to run outputs so the exact invocation can be reproduced.
/// Plain fields sit ahead of the `[model]`/`[train]` tables, as TOML
/// serialization requires.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub data: String,
    pub data_manifest_sha256: String,
    pub checkpoint: String,
    pub trained_steps: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| anyhow::anyhow!("run manifest serialize: {e}"))?;
        fs::write(path, text).with_context(|| format!("write {}", path.display()))?;
        Ok(())
    }
}

/// Hex sha256 of the dataset manifest, tying a run to its exact data.
pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).with_context(|| format!("read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The manifest file inside or at `path`, mirroring how datasets open.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Loads every sequence that carries all `attributes`; an empty list keeps
/// everything.
pub fn load_samples(
    path: &Path,
    attributes: &[Attribute],
) -> Result<Vec<SequenceSample>, CliError> {
    let dataset = Dataset::open(path)?;
    let mut out = Vec::new();
    for sample in dataset.stream() {
        let sample = sample?;
        if attributes.iter().all(|&a| sample.attr(a).is_some()) {
            out.push(sample);
        }
    }
    if out.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "no sequence in {} carries {attributes:?}",
            path.display()
        )));
    }
    Ok(out)
}

pub fn load_model(path: &Path) -> Result<(Model, CheckpointMeta), CliError> {
    let (model, meta, _extras) = model_from_checkpoint(path)?;
    Ok((model, meta))
}

/// JSONL step log honoring the config cadence; step `last` always logs.
/// Write failures surface once, at [`StepLogger::finish`], instead of
/// aborting mid-training.
pub struct StepLogger {
    writer: BufWriter<fs::File>,
    every: u64,
    last: u64,
    error: Option<std::io::Error>,
}

impl StepLogger {
    pub fn open(path: &Path, append: bool, every: u64, last: u64) -> Result<Self, CliError> {
        let file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .with_context(|| format!("open {}", path.display()))?;
        Ok(Self { writer: BufWriter::new(file), every, last, error: None })
    }

    pub fn log(&mut self, stats: &StepStats) {
        let cadence = self.every > 0 && stats.step % self.every == 0;
        if !(cadence || stats.step == self.last) || self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(stats).expect("step stats always serialize");
        if let Err(e) = writeln!(self.writer, "{line}") {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        if let Some(e) = self.error {
            return Err(CliError::Runtime(anyhow::Error::new(e).context("step log")));
        }
        self.writer.flush().context("step log")?;
        Ok(())
    }
}

/// Parses an attribute list like "coord,normal", or the shorthand "all".
pub fn parse_attributes(spec: &str) -> Result<Vec<Attribute>, CliError> {
    if spec == "all" {
        return Ok(vec![Attribute::Coord, Attribute::Normal, Attribute::Radius]);
    }
    let mut out = Vec::new();
    for part in spec.split(',') {
        let attr = match part.trim() {
            "coord" => Attribute::Coord,
            "normal" => Attribute::Normal,
            "radius" => Attribute::Radius,
            other => {
                return Err(usage(format!(
                    "unknown attribute {other:?}; expected coord, normal, radius, or all"
                )))
            }
        };
        if !out.contains(&attr) {
            out.push(attr);
        }
    }
    if out.is_empty() {
        return Err(usage("empty attribute list"));
    }
    Ok(out)
}
