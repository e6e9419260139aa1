//! `vcgeo export`: one sequence's ground truth, and optionally a
//! checkpoint's predictions, as PLY point clouds and PPM previews.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use vcgeo_core::dataio::Dataset;
use vcgeo_core::diffusion::{one_step_infer, NoiseSchedule};
use vcgeo_core::eval::{cloud_from_maps, tokens_to_maps};
use vcgeo_core::export::{write_ply, write_ppm};
use vcgeo_core::geometry::{Attribute, GeoMap};

use crate::common::load_model;
use crate::CliError;

#[derive(Args)]
pub struct ExportArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Sequence id; the first one when omitted.
    #[arg(long)]
    pub id: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export this checkpoint's predictions.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Noise schedule length; must match training.
    #[arg(long, default_value_t = 1000)]
    pub diffusion_steps: usize,
}

pub fn run(args: &ExportArgs) -> Result<(), CliError> {
    let dataset = Dataset::open(&args.data)?;
    let id = match &args.id {
        Some(id) => id.clone(),
        None => dataset.ids().next().expect("open rejects empty datasets").to_string(),
    };
    let sample = dataset.load(&id)?;
    fs::create_dir_all(&args.out).with_context(|| format!("create {}", args.out.display()))?;

    let mut written = 0usize;
    for (attr, maps) in &sample.maps {
        for (f, map) in maps.iter().enumerate() {
            write_ppm(&args.out.join(format!("gt_{}_{f:02}.ppm", attr.name())), map)?;
            written += 1;
        }
    }
    if let (Some(coords), Some(normals)) =
        (sample.attr(Attribute::Coord), sample.attr(Attribute::Normal))
    {
        write_ply(&args.out.join("gt.ply"), &cloud_from_maps(coords, normals)?)?;
        written += 1;
    }

    if let Some(ckpt) = &args.ckpt {
        let (model, _meta) = load_model(ckpt)?;
        let schedule = NoiseSchedule::linear(args.diffusion_steps)?;
        let (layout, rgb) = vcgeo_core::model::build_rgb_tokens(&sample, &model.config)?;
        let rgb_maps = sample.attr(Attribute::Rgb).expect("tokenized from rgb");
        let mut pred_coords: Option<Vec<GeoMap>> = None;
        let mut pred_normals: Option<Vec<GeoMap>> = None;
        for attr in [Attribute::Coord, Attribute::Normal, Attribute::Radius] {
            let result = one_step_infer(&model, &layout, &rgb, attr, &schedule)?;
            let maps = tokens_to_maps(
                &result.tokens,
                attr,
                &sample.normalization,
                model.config.patch,
                rgb_maps,
            )?;
            for (f, map) in maps.iter().enumerate() {
                write_ppm(&args.out.join(format!("pred_{}_{f:02}.ppm", attr.name())), map)?;
                written += 1;
            }
            match attr {
                Attribute::Coord => pred_coords = Some(maps),
                Attribute::Normal => pred_normals = Some(maps),
                _ => {}
            }
        }
        let (coords, normals) =
            (pred_coords.expect("looped over coord"), pred_normals.expect("looped over normal"));
        write_ply(&args.out.join("pred.ply"), &cloud_from_maps(&coords, &normals)?)?;
        written += 1;
    }

    println!("exported {written} files for {id} into {}", args.out.display());
    Ok(())
}
