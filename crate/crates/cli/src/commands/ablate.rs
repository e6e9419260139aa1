//! `vcgeo ablate`: train all conditioning and target variants under one
//! budget, score them on the same held-out data, and report the pairwise
//! comparisons of interest.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use vcgeo_core::dataio::{localize_sample, SequenceSample};
use vcgeo_core::diffusion::NoiseSchedule;
use vcgeo_core::eval::{evaluate_dataset, SummaryScores};
use vcgeo_core::geometry::Attribute;
use vcgeo_core::model::{Conditioning, Model};
use vcgeo_core::train::{save_train_checkpoint, train_loop, AdamW};

use crate::common::{load_samples, RunConfig, StepLogger};
use crate::CliError;

#[derive(Args)]
pub struct AblateArgs {
    /// Training dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out evaluation dataset.
    #[arg(long)]
    pub eval_data: PathBuf,
    /// Output directory; one subdirectory per variant plus ablation.toml.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration TOML; the [model] mode and [train] attributes are
    /// overridden per variant, everything else is shared.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured per-variant step budget.
    #[arg(long)]
    pub steps: Option<u64>,
}

const ALL_TARGETS: &[Attribute] = &[Attribute::Coord, Attribute::Normal, Attribute::Radius];

struct Variant {
    name: &'static str,
    mode: Conditioning,
    attributes: &'static [Attribute],
    /// Re-express targets in each frame's own camera instead of frame 0's.
    localize: bool,
}

fn variants() -> [Variant; 5] {
    [
        Variant {
            name: "shared_pos",
            mode: Conditioning::SharedPos,
            attributes: ALL_TARGETS,
            localize: false,
        },
        Variant {
            name: "seq_concat",
            mode: Conditioning::SeqConcat,
            attributes: ALL_TARGETS,
            localize: false,
        },
        Variant {
            name: "channel_concat",
            mode: Conditioning::ChannelConcat,
            attributes: ALL_TARGETS,
            localize: false,
        },
        Variant {
            name: "local_targets",
            mode: Conditioning::SharedPos,
            attributes: ALL_TARGETS,
            localize: true,
        },
        Variant {
            name: "single_normal",
            mode: Conditioning::SharedPos,
            attributes: &[Attribute::Normal],
            localize: false,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub name: String,
    pub mode: Conditioning,
    pub localized: bool,
    pub attributes: Vec<Attribute>,
    pub summary: SummaryScores,
}

/// ablation.toml: the shared budget and each variant's held-out summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub steps: u64,
    #[serde(rename = "variant")]
    pub variants: Vec<VariantOutcome>,
}

fn localize_all(samples: &[SequenceSample]) -> Result<Vec<SequenceSample>, CliError> {
    samples.iter().map(|s| localize_sample(s).map_err(Into::into)).collect()
}

/// Prints "label: a_name x <= b_name y: holds|violated" for the mean normal
/// angular error of two variants.
fn report_order(outcomes: &[VariantOutcome], better: &str, worse: &str) {
    let deg = |name: &str| {
        outcomes
            .iter()
            .find(|o| o.name == name)
            .and_then(|o| o.summary.normal.as_ref())
            .map(|n| n.mean_deg)
    };
    match (deg(better), deg(worse)) {
        (Some(a), Some(b)) => {
            let verdict = if a <= b { "holds" } else { "violated" };
            println!("normal mean deg: {better} {a:.3} <= {worse} {b:.3}: {verdict}");
        }
        _ => println!("normal mean deg: {better} vs {worse}: missing scores"),
    }
}

pub fn run(args: &AblateArgs) -> Result<(), CliError> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        rc.train.seed = seed;
    }
    if let Some(steps) = args.steps {
        rc.train.steps = steps;
    }
    rc.validate()?;

    let train_samples = load_samples(&args.data, ALL_TARGETS)?;
    let eval_samples = load_samples(&args.eval_data, ALL_TARGETS)?;
    let train_local = localize_all(&train_samples)?;
    let eval_local = localize_all(&eval_samples)?;
    fs::create_dir_all(&args.out).with_context(|| format!("create {}", args.out.display()))?;
    let schedule = NoiseSchedule::linear(rc.train.diffusion_steps)?;

    let mut outcomes: Vec<VariantOutcome> = Vec::new();
    for v in variants() {
        let mut model_cfg = rc.model;
        model_cfg.mode = v.mode;
        let mut train_cfg = rc.train.clone();
        train_cfg.attributes = v.attributes.to_vec();
        let (train_set, eval_set) =
            if v.localize { (&train_local, &eval_local) } else { (&train_samples, &eval_samples) };

        let dir = args.out.join(v.name);
        fs::create_dir_all(&dir).with_context(|| format!("create {}", dir.display()))?;
        println!(
            "[{}] training {} steps ({:?}, {} target{})",
            v.name,
            train_cfg.steps,
            v.mode,
            v.attributes.len(),
            if v.attributes.len() == 1 { "" } else { "s" }
        );

        let mut model = Model::init(model_cfg, train_cfg.seed)?;
        let mut opt = AdamW::new(&train_cfg, &model.params);
        let mut log = StepLogger::open(
            &dir.join("train_log.jsonl"),
            false,
            train_cfg.log_every,
            train_cfg.steps,
        )?;
        train_loop(&mut model, &mut opt, train_set, &train_cfg, 0, train_cfg.steps, |stats| {
            log.log(stats)
        })?;
        log.finish()?;
        save_train_checkpoint(&dir.join("model.ckpt"), &mut model, &mut opt, train_cfg.seed)?;

        let report = evaluate_dataset(&model, eval_set, &schedule, v.attributes)?;
        let eval_path = dir.join("eval.toml");
        fs::write(&eval_path, report.to_toml()?)
            .with_context(|| format!("write {}", eval_path.display()))?;

        if let Some(n) = &report.summary.normal {
            let corr = report
                .summary
                .correspondence
                .map(|c| format!(", correspondence {c:.3}"))
                .unwrap_or_default();
            println!("[{}] normal mean {:.3} deg{corr}", v.name, n.mean_deg);
        }
        outcomes.push(VariantOutcome {
            name: v.name.into(),
            mode: v.mode,
            localized: v.localize,
            attributes: v.attributes.to_vec(),
            summary: report.summary,
        });
    }

    let doc =
        AblationReport { seed: rc.train.seed, steps: rc.train.steps, variants: outcomes };
    let out_path = args.out.join("ablation.toml");
    let text =
        toml::to_string_pretty(&doc).map_err(|e| anyhow::anyhow!("ablation serialize: {e}"))?;
    fs::write(&out_path, text).with_context(|| format!("write {}", out_path.display()))?;

    report_order(&doc.variants, "shared_pos", "seq_concat");
    report_order(&doc.variants, "shared_pos", "channel_concat");
    report_order(&doc.variants, "shared_pos", "local_targets");
    report_order(&doc.variants, "shared_pos", "single_normal");
    let corr = |name: &str| {
        doc.variants.iter().find(|o| o.name == name).and_then(|o| o.summary.correspondence)
    };
    if let (Some(sp), Some(sc)) = (corr("shared_pos"), corr("seq_concat")) {
        let verdict = if sp > sc { "holds" } else { "violated" };
        println!("correspondence: shared_pos {sp:.3} > seq_concat {sc:.3}: {verdict}");
    }
    println!("report written to {}", out_path.display());
    Ok(())
}
