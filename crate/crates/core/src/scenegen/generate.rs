//! End-to-end sequence generation: sample a scene, find a camera path whose
//! frames overlap enough, render, and lift the renders into global-frame
//! training targets with a freshly fit normalization record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::render::{render_frame, RenderedFrame};
use super::scene::{build_scene, Scene};
use super::trajectory::{look_at, sample_trajectory, PoseSpec, TrajectoryKind};
use super::{SceneConfig, SceneGenError, TrajectoryChoice};
use crate::dataio::{
    fit_record, overlap_ratio, wash_coord_map, wash_radius_map, DatasetWriter, FrameView,
    SequenceSample,
};
use crate::geometry::{
    radius_map, to_global_coords, to_global_normals, unproject, Attribute, Extrinsics, GeoMap,
    Intrinsics,
};

/// Margins keeping cameras off walls and out of boxes.
const WALL_MARGIN: f64 = 0.25;
const BOX_MARGIN: f64 = 0.15;
/// Inter-frame motion scale decay per retry.
const RETRY_SHRINK: f64 = 0.75;

fn poses_valid(scene: &Scene, poses: &[PoseSpec]) -> bool {
    poses.iter().all(|p| {
        (p.eye - p.target).norm() >= 0.5
            && (0..3).all(|a| p.eye[a].abs() <= scene.room_half[a] - WALL_MARGIN)
            && !scene.boxes.iter().any(|b| b.contains(&p.eye, BOX_MARGIN))
    })
}

fn consecutive_overlaps_ok(
    frames: &[RenderedFrame],
    k: &Intrinsics,
    extr: &[Extrinsics],
    min_overlap: f64,
) -> Result<bool, SceneGenError> {
    for i in 0..frames.len() - 1 {
        let a = FrameView { depth: &frames[i].depth, intrinsics: k, extrinsics: &extr[i] };
        let b = FrameView { depth: &frames[i + 1].depth, intrinsics: k, extrinsics: &extr[i + 1] };
        let sym = (overlap_ratio(a, b)? + overlap_ratio(b, a)?) / 2.0;
        if sym < min_overlap {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn generate_sequence(cfg: &SceneConfig, seed: u64) -> Result<SequenceSample, SceneGenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = build_scene(cfg, &mut rng);
    let fov = rng.gen_range(cfg.fov_deg[0]..=cfg.fov_deg[1]).to_radians();
    let fx = cfg.width as f64 / (2.0 * (fov / 2.0).tan());
    let k = Intrinsics {
        fx,
        fy: fx,
        cx: (cfg.width as f64 - 1.0) / 2.0,
        cy: (cfg.height as f64 - 1.0) / 2.0,
    };
    let kind = match cfg.trajectory {
        TrajectoryChoice::Orbit => TrajectoryKind::Orbit,
        TrajectoryChoice::Dolly => TrajectoryKind::Dolly,
        TrajectoryChoice::LookatJitter => TrajectoryKind::LookatJitter,
        TrajectoryChoice::Mixed => match rng.gen_range(0..3u8) {
            0 => TrajectoryKind::Orbit,
            1 => TrajectoryKind::Dolly,
            _ => TrajectoryKind::LookatJitter,
        },
    };

    let mut chosen: Option<(Vec<Extrinsics>, Vec<RenderedFrame>)> = None;
    for attempt in 0..cfg.max_retries {
        let shrink = RETRY_SHRINK.powi(attempt as i32);
        let poses = sample_trajectory(kind, cfg.frames, &scene, &mut rng, shrink);
        if !poses_valid(&scene, &poses) {
            continue;
        }
        let extr: Result<Vec<Extrinsics>, _> =
            poses.iter().map(|p| look_at(p.eye, p.target)).collect();
        let Ok(extr) = extr else { continue };
        let frames: Result<Vec<RenderedFrame>, _> = extr
            .iter()
            .map(|e| render_frame(&scene, &k, e, cfg.width, cfg.height))
            .collect();
        let frames = frames?;
        let pixels = (cfg.width * cfg.height) as f64;
        let enough_valid = frames
            .iter()
            .all(|f| f.depth.valid_pixels() as f64 / pixels >= cfg.min_valid_fraction);
        if !enough_valid {
            continue;
        }
        if !consecutive_overlaps_ok(&frames, &k, &extr, cfg.min_overlap)? {
            continue;
        }
        chosen = Some((extr, frames));
        break;
    }
    let Some((extrinsics, rendered)) = chosen else {
        return Err(SceneGenError::RetriesExhausted { seed, attempts: cfg.max_retries });
    };

    let mut coords: Vec<GeoMap> = Vec::with_capacity(cfg.frames);
    for (f, r) in rendered.iter().enumerate() {
        let cam = unproject(&r.depth, &k)?;
        coords.push(to_global_coords(&cam, &extrinsics[f], &extrinsics[0])?);
    }
    let record = fit_record(&coords)?;
    for c in coords.iter_mut() {
        wash_coord_map(c, &record);
    }
    let radii: Vec<GeoMap> = coords
        .iter()
        .map(|c| {
            let mut r = radius_map(c)?;
            wash_radius_map(&mut r, &record);
            Ok::<GeoMap, SceneGenError>(r)
        })
        .collect::<Result<_, _>>()?;
    let normals: Vec<GeoMap> = rendered
        .iter()
        .enumerate()
        .map(|(f, r)| Ok(to_global_normals(&r.normal_cam, &extrinsics[f], &extrinsics[0])?))
        .collect::<Result<_, SceneGenError>>()?;

    let mut maps = BTreeMap::new();
    maps.insert(Attribute::Rgb, rendered.iter().map(|r| r.rgb.clone()).collect::<Vec<_>>());
    maps.insert(Attribute::Depth, rendered.into_iter().map(|r| r.depth).collect::<Vec<_>>());
    maps.insert(Attribute::Coord, coords);
    maps.insert(Attribute::Normal, normals);
    maps.insert(Attribute::Radius, radii);

    let sample = SequenceSample {
        id: format!("seq-{seed:016x}"),
        height: cfg.height,
        width: cfg.width,
        intrinsics: vec![k; cfg.frames],
        extrinsics,
        maps,
        normalization: record,
    };
    sample.validate()?;
    Ok(sample)
}

/// Generates `count` sequences seeded `seed0..seed0+count` and writes them
/// as a dataset; returns the manifest path and the sequence ids.
pub fn generate_dataset(
    cfg: &SceneConfig,
    count: usize,
    seed0: u64,
    out_root: &Path,
) -> Result<(PathBuf, Vec<String>), SceneGenError> {
    let mut writer = DatasetWriter::create(out_root)?;
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let sample = generate_sequence(cfg, seed0 + i as u64)?;
        ids.push(sample.id.clone());
        writer.add(&sample)?;
    }
    let manifest = writer.finish_default_splits()?;
    Ok((manifest, ids))
}
