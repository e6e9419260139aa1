//! `vcgeo eval`: score a checkpoint on stored sequences, optionally against
//! constant baselines fit on a reference set and scored through the same
//! metric code.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use vcgeo_core::diffusion::NoiseSchedule;
use vcgeo_core::eval::{
    constant_normal_scores, constant_radius_scores, evaluate_dataset, mean_normal_of,
    median_radius_of, NormalMetrics, ReconMetrics, ScaledMetrics, SequenceScores, SummaryScores,
};
use vcgeo_core::geometry::Attribute;

use crate::common::{load_model, load_samples, parse_attributes};
use crate::CliError;

#[derive(Args)]
pub struct EvalArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Evaluation dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML report path; stdout gets a short summary either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Attributes to score: coord, normal, radius, or all.
    #[arg(long, default_value = "all")]
    pub attributes: String,
    /// Reference dataset (typically the training set) whose mean normal and
    /// median radius become constant baselines on the evaluation sequences.
    #[arg(long)]
    pub baseline_data: Option<PathBuf>,
    /// Noise schedule length; must match training.
    #[arg(long, default_value_t = 1000)]
    pub diffusion_steps: usize,
}

/// Constant predictors scored like the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<NormalMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<ScaledMetrics>,
}

/// On-disk report: model summary, optional baselines, per-sequence rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalDocument {
    pub summary: SummaryScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineScores>,
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<SequenceScores>,
}

fn fmt_normal(n: &NormalMetrics) -> String {
    format!(
        "mean {:.2} deg, median {:.2} deg, within 11.25 deg {:.1}%",
        n.mean_deg,
        n.median_deg,
        100.0 * n.within_11_25
    )
}

fn fmt_scaled(s: &ScaledMetrics) -> String {
    format!("abs_rel {:.4}, rmse {:.4}, delta1 {:.3}", s.abs_rel, s.rmse, s.delta1)
}

fn fmt_recon(r: &ReconMetrics) -> String {
    format!(
        "accuracy {:.4}, completeness {:.4}, normal consistency {:.4}",
        r.accuracy, r.completeness, r.normal_consistency
    )
}

fn print_summary(summary: &SummaryScores, baseline: Option<&BaselineScores>) {
    println!("sequences: {}", summary.sequences);
    if let Some(n) = &summary.normal {
        println!("normal: {}", fmt_normal(n));
    }
    if let Some(r) = &summary.radius {
        println!("radius: {}", fmt_scaled(r));
    }
    if let Some(d) = &summary.depth {
        println!("depth (scale/shift aligned): {}", fmt_scaled(d));
    }
    if let Some(c) = summary.coord_rmse {
        println!("coord rmse: {c:.4}");
    }
    if let Some(r) = &summary.recon {
        println!("recon: {}", fmt_recon(r));
    }
    if let Some(c) = summary.correspondence {
        println!("correspondence: {c:.3} (uniform attention scores 1.0)");
    }
    if let Some(b) = baseline {
        if let Some(n) = &b.normal {
            println!("baseline normal: {}", fmt_normal(n));
        }
        if let Some(r) = &b.radius {
            println!("baseline radius: {}", fmt_scaled(r));
        }
    }
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let attrs = parse_attributes(&args.attributes)?;
    let (model, meta) = load_model(&args.ckpt)?;
    let schedule = NoiseSchedule::linear(args.diffusion_steps)?;
    let samples = load_samples(&args.data, &attrs)?;
    println!("checkpoint at {} steps; evaluating {} sequences", meta.trained_steps, samples.len());

    let report = evaluate_dataset(&model, &samples, &schedule, &attrs)?;
    let baseline = match &args.baseline_data {
        None => None,
        Some(path) => {
            let mut scores = BaselineScores { normal: None, radius: None };
            if attrs.contains(&Attribute::Normal) {
                let reference = load_samples(path, &[Attribute::Normal])?;
                scores.normal =
                    Some(constant_normal_scores(mean_normal_of(&reference)?, &samples)?);
            }
            if attrs.contains(&Attribute::Radius) {
                let reference = load_samples(path, &[Attribute::Radius])?;
                scores.radius =
                    Some(constant_radius_scores(median_radius_of(&reference)?, &samples)?);
            }
            Some(scores)
        }
    };

    print_summary(&report.summary, baseline.as_ref());
    if let Some(out) = &args.out {
        let doc = EvalDocument { summary: report.summary, baseline, sequences: report.sequences };
        let text = toml::to_string_pretty(&doc)
            .map_err(|e| anyhow::anyhow!("report serialize: {e}"))?;
        fs::write(out, text).with_context(|| format!("write {}", out.display()))?;
        println!("report written to {}", out.display());
    }
    Ok(())
}
