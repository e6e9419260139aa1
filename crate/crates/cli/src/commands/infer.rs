//! `vcgeo infer`: geometry prediction for stored sequences from their
//! images alone. Cameras and ground-truth maps are never consulted; pixel
//! validity masks come from the stored rgb maps.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vcgeo_core::dataio::{write_geomap, Dataset};
use vcgeo_core::diffusion::{ddim_sample, one_step_infer, NoiseSchedule, Parameterization};
use vcgeo_core::eval::tokens_to_maps;
use vcgeo_core::export::write_ppm;
use vcgeo_core::geometry::Attribute;
use vcgeo_core::model::build_rgb_tokens;
use vcgeo_core::numerics::Tensor;

use crate::common::{load_model, parse_attributes};
use crate::{usage, CliError};

#[derive(Args)]
pub struct InferArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Sequence id; all sequences when omitted.
    #[arg(long)]
    pub id: Option<String>,
    /// Output directory; one subdirectory per sequence.
    #[arg(long)]
    pub out: PathBuf,
    /// Attributes to predict: coord, normal, radius, or all.
    #[arg(long, default_value = "all")]
    pub attributes: String,
    /// Denoising steps; 1 is the deterministic single pass.
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Noise schedule length; must match training.
    #[arg(long, default_value_t = 1000)]
    pub diffusion_steps: usize,
    /// Network output meaning (x0 or epsilon); must match training.
    #[arg(long, default_value = "x0")]
    pub parameterization: String,
    /// Init-noise seed, used only when --steps exceeds 1.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn parse_parameterization(spec: &str) -> Result<Parameterization, CliError> {
    match spec {
        "x0" => Ok(Parameterization::X0),
        "epsilon" => Ok(Parameterization::Epsilon),
        other => Err(usage(format!(
            "unknown parameterization {other:?}; expected x0 or epsilon"
        ))),
    }
}

pub fn run(args: &InferArgs) -> Result<(), CliError> {
    if args.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let attrs = parse_attributes(&args.attributes)?;
    let parameterization = parse_parameterization(&args.parameterization)?;
    let (model, _meta) = load_model(&args.ckpt)?;
    let schedule = NoiseSchedule::linear(args.diffusion_steps)?;
    let dataset = Dataset::open(&args.data)?;
    let ids: Vec<String> = match &args.id {
        Some(id) => vec![id.clone()],
        None => dataset.ids().map(str::to_string).collect(),
    };

    for id in &ids {
        let sample = dataset.load(id)?;
        let (layout, rgb) = build_rgb_tokens(&sample, &model.config)?;
        let rgb_maps = sample.attr(Attribute::Rgb).expect("tokenized from rgb");
        let dir = args.out.join(id);
        fs::create_dir_all(&dir).with_context(|| format!("create {}", dir.display()))?;
        for &attr in &attrs {
            let result = if args.steps == 1 {
                one_step_infer(&model, &layout, &rgb, attr, &schedule)?
            } else {
                let shape = vec![layout.image_tokens(), model.config.patch_dim()];
                let n: usize = shape.iter().product();
                let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
                let noise: Vec<f64> =
                    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let init = Tensor::from_vec(shape, noise);
                ddim_sample(
                    &model,
                    &layout,
                    &rgb,
                    attr,
                    &schedule,
                    parameterization,
                    args.steps,
                    init,
                )?
            };
            let maps = tokens_to_maps(
                &result.tokens,
                attr,
                &sample.normalization,
                model.config.patch,
                rgb_maps,
            )?;
            for (f, map) in maps.iter().enumerate() {
                write_geomap(&dir.join(format!("{}_{f:02}.ugeo", attr.name())), map)?;
                write_ppm(&dir.join(format!("{}_{f:02}.ppm", attr.name())), map)?;
            }
        }
        println!("inferred {:?} for {id} into {}", attrs, dir.display());
    }
    Ok(())
}
