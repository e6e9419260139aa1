//! `vcgeo probe-attn`: how much attention mass geometry tokens place on
//! their own pixels' rgb tokens, per layer and overall. Uniform attention
//! scores 1.0; higher means the streams align by position.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use vcgeo_core::dataio::Dataset;
use vcgeo_core::diffusion::{one_step_infer, NoiseSchedule};
use vcgeo_core::eval::correspondence_score;
use vcgeo_core::geometry::Attribute;
use vcgeo_core::model::build_rgb_tokens;

use crate::common::{load_model, parse_attributes};
use crate::{usage, CliError};

#[derive(Args)]
pub struct ProbeArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Sequence id; the first one when omitted.
    #[arg(long)]
    pub id: Option<String>,
    /// Attribute whose inference pass is probed.
    #[arg(long, default_value = "coord")]
    pub attribute: String,
    /// Noise schedule length; must match training.
    #[arg(long, default_value_t = 1000)]
    pub diffusion_steps: usize,
    /// Optional TOML output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ProbeDocument {
    id: String,
    attribute: Attribute,
    overall: f64,
    per_layer: Vec<f64>,
}

pub fn run(args: &ProbeArgs) -> Result<(), CliError> {
    let attrs = parse_attributes(&args.attribute)?;
    let [attr] = attrs.as_slice() else {
        return Err(usage("--attribute takes exactly one attribute"));
    };
    let (model, _meta) = load_model(&args.ckpt)?;
    let schedule = NoiseSchedule::linear(args.diffusion_steps)?;
    let dataset = Dataset::open(&args.data)?;
    let id = match &args.id {
        Some(id) => id.clone(),
        None => dataset.ids().next().expect("open rejects empty datasets").to_string(),
    };
    let sample = dataset.load(&id)?;
    let (layout, rgb) = build_rgb_tokens(&sample, &model.config)?;
    let result = one_step_infer(&model, &layout, &rgb, *attr, &schedule)?;

    let mut per_layer = Vec::with_capacity(result.attention.len());
    for attention in &result.attention {
        per_layer.push(correspondence_score(std::slice::from_ref(attention), &layout)?);
    }
    let overall = correspondence_score(&result.attention, &layout)?;

    println!("sequence {id}, attribute {}", attr.name());
    for (i, score) in per_layer.iter().enumerate() {
        println!("layer {i}: {score:.3}");
    }
    println!("overall: {overall:.3} (uniform attention scores 1.0)");

    if let Some(out) = &args.out {
        let doc = ProbeDocument { id, attribute: *attr, overall, per_layer };
        let text =
            toml::to_string_pretty(&doc).map_err(|e| anyhow::anyhow!("probe serialize: {e}"))?;
        fs::write(out, text).with_context(|| format!("write {}", out.display()))?;
    }
    Ok(())
}
