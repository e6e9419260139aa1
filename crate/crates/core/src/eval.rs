//! Scoring of predicted geometry against ground truth: angular error on
//! normals, scale/shift-aligned scalar metrics for radius and local depth,
//! point-cloud reconstruction quality with exact nearest neighbors, and an
//! attention-correspondence probe. `evaluate_dataset` drives single-pass
//! inference over held-out sequences and aggregates everything into a TOML
//! report.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{NormalizationRecord, SequenceSample};
use crate::diffusion::{one_step_infer, DiffusionError, NoiseSchedule};
use crate::geometry::{global_to_local_depth, Attribute, GeoMap, GeometryError};
use crate::model::{
    build_tokens, prediction_to_map, unpatchify, Conditioning, Model, ModelError, TokenLayout,
};
use crate::numerics::Tensor;

/// Angular-error cutoff (degrees) for the standard inlier fraction.
pub const NORMAL_INLIER_DEG: f64 = 11.25;
/// Ratio threshold for the delta-1 inlier fraction on scalar fields.
pub const DELTA1_RATIO: f64 = 1.25;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eval: {0}")]
    Config(String),
    #[error("eval: {0}")]
    Empty(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_stacks(pred: &[GeoMap], gt: &[GeoMap]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Config(format!(
            "{} predicted frames against {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.height != g.height || p.width != g.width {
            return Err(EvalError::Config(format!(
                "frame {i}: predicted {}x{}, ground truth {}x{}",
                p.height, p.width, g.height, g.width
            )));
        }
    }
    Ok(())
}

fn unit3(p: &[f32]) -> Option<[f64; 3]> {
    let v = [p[0] as f64, p[1] as f64, p[2] as f64];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-12 {
        None
    } else {
        Some([v[0] / n, v[1] / n, v[2] / n])
    }
}

/// Angle between two normals in degrees. A zero-length vector carries no
/// direction; it scores 90, the expected angle against a random direction.
fn angle_deg(a: &[f32], b: &[f32]) -> f64 {
    match (unit3(a), unit3(b)) {
        (Some(a), Some(b)) => {
            let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
            d.acos().to_degrees()
        }
        _ => 90.0,
    }
}

/// `xs` must be sorted.
fn median(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Angular-error statistics over pixels valid in both maps, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    pub mean_deg: f64,
    pub median_deg: f64,
    /// Fraction of pixels with error below [`NORMAL_INLIER_DEG`].
    pub within_11_25: f64,
    pub pixels: usize,
}

pub fn normal_angular_metrics(pred: &[GeoMap], gt: &[GeoMap]) -> Result<NormalMetrics, EvalError> {
    check_stacks(pred, gt)?;
    let mut angles = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        for v in 0..g.height {
            for u in 0..g.width {
                if g.masked(v, u) && p.masked(v, u) {
                    angles.push(angle_deg(p.pixel(v, u), g.pixel(v, u)));
                }
            }
        }
    }
    if angles.is_empty() {
        return Err(EvalError::Empty("no valid pixels for normal metrics".into()));
    }
    angles.sort_by(f64::total_cmp);
    let pixels = angles.len();
    let inliers = angles.iter().filter(|&&a| a < NORMAL_INLIER_DEG).count();
    Ok(NormalMetrics {
        mean_deg: angles.iter().sum::<f64>() / pixels as f64,
        median_deg: median(&angles),
        within_11_25: inliers as f64 / pixels as f64,
        pixels,
    })
}

/// Metrics on a positive scalar field (radius, depth), optionally after a
/// least-squares scale/shift alignment of the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledMetrics {
    /// Mean of |p - g| / g.
    pub abs_rel: f64,
    pub rmse: f64,
    /// Fraction of pixels with max(p/g, g/p) below [`DELTA1_RATIO`];
    /// non-positive predictions count as failures.
    pub delta1: f64,
    /// Applied alignment; (1, 0) when no fit was requested.
    pub scale: f64,
    pub shift: f64,
    pub pixels: usize,
}

/// Least-squares (scale, shift) minimizing sum((s*p + b - g)^2). Constant
/// predictions carry nothing for a scale to act on: variance below 1e-12
/// falls back to s = 1 with a pure shift.
pub fn scale_shift_fit(pred: &[f64], gt: &[f64]) -> (f64, f64) {
    assert_eq!(pred.len(), gt.len(), "fit needs paired values");
    assert!(!pred.is_empty(), "fit needs at least one value");
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mg = gt.iter().sum::<f64>() / n;
    let mut var = 0.0;
    let mut cov = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        var += (p - mp) * (p - mp);
        cov += (p - mp) * (g - mg);
    }
    if var / n < 1e-12 {
        (1.0, mg - mp)
    } else {
        let s = cov / var;
        (s, mg - s * mp)
    }
}

pub fn scaled_metrics(pred: &[f64], gt: &[f64], fit: bool) -> Result<ScaledMetrics, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Config(format!(
            "{} predicted values against {} ground-truth values",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty("no valid pixels for scalar metrics".into()));
    }
    if gt.iter().any(|&g| !(g > 0.0)) {
        return Err(EvalError::Config("scalar ground truth must be positive".into()));
    }
    let (scale, shift) = if fit { scale_shift_fit(pred, gt) } else { (1.0, 0.0) };
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut inliers = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let p = scale * p + shift;
        abs += (p - g).abs() / g;
        sq += (p - g) * (p - g);
        if p > 0.0 && (p / g).max(g / p) < DELTA1_RATIO {
            inliers += 1;
        }
    }
    let n = pred.len() as f64;
    Ok(ScaledMetrics {
        abs_rel: abs / n,
        rmse: (sq / n).sqrt(),
        delta1: inliers as f64 / n,
        scale,
        shift,
        pixels: pred.len(),
    })
}

/// Channel-0 values at pixels valid in both stacks, paired.
pub fn masked_scalars(pred: &[GeoMap], gt: &[GeoMap]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    check_stacks(pred, gt)?;
    let mut ps = Vec::new();
    let mut gs = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        for v in 0..g.height {
            for u in 0..g.width {
                if g.masked(v, u) && p.masked(v, u) {
                    ps.push(p.at(v, u, 0) as f64);
                    gs.push(g.at(v, u, 0) as f64);
                }
            }
        }
    }
    Ok((ps, gs))
}

/// Root-mean-square euclidean distance between coordinate maps, world units.
pub fn coord_rmse(pred: &[GeoMap], gt: &[GeoMap]) -> Result<f64, EvalError> {
    check_stacks(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for v in 0..g.height {
            for u in 0..g.width {
                if !(g.masked(v, u) && p.masked(v, u)) {
                    continue;
                }
                let a = p.pixel(v, u);
                let b = g.pixel(v, u);
                for c in 0..3 {
                    let d = a[c] as f64 - b[c] as f64;
                    sum += d * d;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(EvalError::Empty("no valid pixels for coordinate rmse".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Flat point set with per-point unit normals, world units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
}

/// Collects pixels valid in both stacks. Normals are re-normalized at 64-bit;
/// a degenerate normal becomes the camera-facing default (0, 0, -1).
pub fn cloud_from_maps(coords: &[GeoMap], normals: &[GeoMap]) -> Result<PointCloud, EvalError> {
    check_stacks(coords, normals)?;
    let mut cloud = PointCloud::default();
    for (c, n) in coords.iter().zip(normals) {
        for v in 0..c.height {
            for u in 0..c.width {
                if !(c.masked(v, u) && n.masked(v, u)) {
                    continue;
                }
                let p = c.pixel(v, u);
                cloud.points.push([p[0] as f64, p[1] as f64, p[2] as f64]);
                cloud.normals.push(unit3(n.pixel(v, u)).unwrap_or([0.0, 0.0, -1.0]));
            }
        }
    }
    Ok(cloud)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Index of the closest target for every query; exact, with distance ties
/// resolved to the lowest target index. Targets are bucketed on a uniform
/// grid and each query scans outward ring by ring until no unvisited cell
/// can hold a closer point.
pub fn nearest_neighbors(
    queries: &[[f64; 3]],
    targets: &[[f64; 3]],
) -> Result<Vec<usize>, EvalError> {
    if targets.is_empty() {
        return Err(EvalError::Empty("nearest neighbor needs at least one target".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in targets {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    // about two targets per occupied cell keeps ring scans short
    let h = if extent > 0.0 { extent / (targets.len() as f64 / 2.0).cbrt().max(1.0) } else { 1.0 };
    let cell_of = |p: &[f64; 3]| [0, 1, 2].map(|a| ((p[a] - lo[a]) / h).floor() as i64);
    let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (i, p) in targets.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i as u32);
    }
    let span = cell_of(&hi);
    let scan = |bucket: &[u32], q: &[f64; 3], best: &mut (f64, usize)| {
        for &i in bucket {
            let d2 = dist2(q, &targets[i as usize]);
            if d2 < best.0 || (d2 == best.0 && (i as usize) < best.1) {
                *best = (d2, i as usize);
            }
        }
    };
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let raw = [0, 1, 2].map(|a| ((q[a] - lo[a]) / h).floor());
        let mut best = (f64::INFINITY, usize::MAX);
        if raw.iter().any(|v| v.abs() > 1e6) {
            // a query this far outside the grid gains nothing from the ring
            // walk; a direct scan is exact and just as fast
            scan(&(0..targets.len() as u32).collect::<Vec<_>>(), q, &mut best);
            out.push(best.1);
            continue;
        }
        let cq = raw.map(|v| v as i64);
        // rings closer than the Chebyshev distance to the grid box are empty
        let mut k = (0..3).map(|a| (-cq[a]).max(cq[a] - span[a]).max(0)).max().unwrap();
        loop {
            if best.1 != usize::MAX && k >= 1 {
                // every point in ring k sits farther than (k-1)*h from q;
                // the margin guards the bound against its own rounding
                let lb = (k - 1) as f64 * h * (1.0 - 1e-12);
                if lb * lb > best.0 {
                    break;
                }
            }
            for dx in -k..=k {
                let cx = cq[0] + dx;
                if cx < 0 || cx > span[0] {
                    continue;
                }
                for dy in -k..=k {
                    let cy = cq[1] + dy;
                    if cy < 0 || cy > span[1] {
                        continue;
                    }
                    for dz in -k..=k {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != k {
                            continue;
                        }
                        let cz = cq[2] + dz;
                        if cz < 0 || cz > span[2] {
                            continue;
                        }
                        if let Some(bucket) = cells.get(&[cx, cy, cz]) {
                            scan(bucket, q, &mut best);
                        }
                    }
                }
            }
            let grid_covered = (0..3).all(|a| cq[a] - k <= 0 && cq[a] + k >= span[a]);
            if grid_covered {
                break;
            }
            k += 1;
        }
        out.push(best.1);
    }
    Ok(out)
}

/// Two-sided point-cloud comparison in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    /// Mean distance from each predicted point to its nearest ground-truth
    /// point.
    pub accuracy: f64,
    /// Mean distance from each ground-truth point to its nearest predicted
    /// point.
    pub completeness: f64,
    /// Mean |cos| between matched normals, averaged over both directions.
    pub normal_consistency: f64,
    pub pred_points: usize,
    pub gt_points: usize,
}

pub fn recon_metrics(pred: &PointCloud, gt: &PointCloud) -> Result<ReconMetrics, EvalError> {
    if pred.points.len() != pred.normals.len() || gt.points.len() != gt.normals.len() {
        return Err(EvalError::Config("cloud points and normals must pair up".into()));
    }
    if pred.points.is_empty() || gt.points.is_empty() {
        return Err(EvalError::Empty("reconstruction metrics need non-empty clouds".into()));
    }
    let to_gt = nearest_neighbors(&pred.points, &gt.points)?;
    let to_pred = nearest_neighbors(&gt.points, &pred.points)?;
    let dot = |a: &[f64; 3], b: &[f64; 3]| (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs();
    let mut acc = 0.0;
    let mut nc_fwd = 0.0;
    for (i, &j) in to_gt.iter().enumerate() {
        acc += dist2(&pred.points[i], &gt.points[j]).sqrt();
        nc_fwd += dot(&pred.normals[i], &gt.normals[j]);
    }
    let mut comp = 0.0;
    let mut nc_bwd = 0.0;
    for (j, &i) in to_pred.iter().enumerate() {
        comp += dist2(&gt.points[j], &pred.points[i]).sqrt();
        nc_bwd += dot(&gt.normals[j], &pred.normals[i]);
    }
    let (np, ng) = (pred.points.len() as f64, gt.points.len() as f64);
    Ok(ReconMetrics {
        accuracy: acc / np,
        completeness: comp / ng,
        normal_consistency: 0.5 * (nc_fwd / np + nc_bwd / ng),
        pred_points: pred.points.len(),
        gt_points: gt.points.len(),
    })
}

/// Mean attention mass each geometry token spends on its same-position rgb
/// token, scaled by the row length so uniform attention scores exactly 1.
/// Needs a two-stream layout; channel-stacked inputs have no such pairs.
pub fn correspondence_score(
    attention: &[Tensor],
    layout: &TokenLayout,
) -> Result<f64, EvalError> {
    if layout.mode == Conditioning::ChannelConcat {
        return Err(EvalError::Config(
            "correspondence needs separate rgb and geometry token streams".into(),
        ));
    }
    if attention.is_empty() {
        return Err(EvalError::Empty("no attention maps captured".into()));
    }
    let n = layout.image_tokens();
    let total = 2 * n;
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in attention {
        let shape = a.shape();
        if shape.len() != 3 || shape[1] != total || shape[2] != total {
            return Err(EvalError::Config(format!(
                "attention shape {shape:?} does not match {total} input tokens"
            )));
        }
        let heads = shape[0];
        let data = a.data();
        for hd in 0..heads {
            for i in 0..n {
                sum += data[(hd * total + n + i) * total + i];
                count += 1;
            }
        }
    }
    Ok(sum / count as f64 * total as f64)
}

/// Splits flat prediction tokens back into per-frame denormalized maps.
/// Masks are copied from `mask_from` (typically the ground-truth or rgb
/// stack); predictions at masked-out pixels are meaningless.
pub fn tokens_to_maps(
    tokens: &Tensor,
    attribute: Attribute,
    record: &NormalizationRecord,
    patch: usize,
    mask_from: &[GeoMap],
) -> Result<Vec<GeoMap>, EvalError> {
    let frames = mask_from.len();
    if frames == 0 {
        return Err(EvalError::Empty("no frames to reassemble".into()));
    }
    let (h, w) = (mask_from[0].height, mask_from[0].width);
    if mask_from.iter().any(|m| m.height != h || m.width != w) {
        return Err(EvalError::Config("mask frames disagree on image size".into()));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(EvalError::Config(format!("patch {patch} does not divide {h}x{w}")));
    }
    let (rows, cols) = (h / patch, w / patch);
    let per_frame = rows * cols;
    let patch_dim = patch * patch * 3;
    if tokens.shape() != [frames * per_frame, patch_dim] {
        return Err(EvalError::Config(format!(
            "prediction shape {:?}, layout wants [{}, {patch_dim}]",
            tokens.shape(),
            frames * per_frame
        )));
    }
    let mut out = Vec::with_capacity(frames);
    for (f, donor) in mask_from.iter().enumerate() {
        let flat = &tokens.data()[f * per_frame * patch_dim..(f + 1) * per_frame * patch_dim];
        let channels = unpatchify(flat, rows, cols, 3, patch);
        out.push(prediction_to_map(&channels, attribute, record, h, w, &donor.mask)?);
    }
    Ok(out)
}

/// One sequence's scores. Fields stay `None` when the matching attribute was
/// not requested or the inputs for them are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub id: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<NormalMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<ScaledMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<ScaledMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon: Option<ReconMetrics>,
}

/// Field-wise means over sequences. Medians average as means of per-sequence
/// medians; pixel and point counts sum; fit parameters average as nuisance
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryScores {
    pub sequences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<NormalMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<ScaledMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<ScaledMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon: Option<ReconMetrics>,
}

/// Dataset-level report: the summary plus every per-sequence row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: SummaryScores,
    pub sequences: Vec<SequenceScores>,
}

impl EvalReport {
    pub fn to_toml(&self) -> Result<String, EvalError> {
        toml::to_string_pretty(self)
            .map_err(|e| EvalError::Config(format!("report serialize: {e}")))
    }

    pub fn from_toml(s: &str) -> Result<Self, EvalError> {
        toml::from_str(s).map_err(|e| EvalError::Config(format!("report parse: {e}")))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn agg_f64(xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(mean(&xs))
    }
}

fn agg_normal(xs: Vec<NormalMetrics>) -> Option<NormalMetrics> {
    if xs.is_empty() {
        return None;
    }
    Some(NormalMetrics {
        mean_deg: mean(&xs.iter().map(|m| m.mean_deg).collect::<Vec<_>>()),
        median_deg: mean(&xs.iter().map(|m| m.median_deg).collect::<Vec<_>>()),
        within_11_25: mean(&xs.iter().map(|m| m.within_11_25).collect::<Vec<_>>()),
        pixels: xs.iter().map(|m| m.pixels).sum(),
    })
}

fn agg_scaled(xs: Vec<ScaledMetrics>) -> Option<ScaledMetrics> {
    if xs.is_empty() {
        return None;
    }
    Some(ScaledMetrics {
        abs_rel: mean(&xs.iter().map(|m| m.abs_rel).collect::<Vec<_>>()),
        rmse: mean(&xs.iter().map(|m| m.rmse).collect::<Vec<_>>()),
        delta1: mean(&xs.iter().map(|m| m.delta1).collect::<Vec<_>>()),
        scale: mean(&xs.iter().map(|m| m.scale).collect::<Vec<_>>()),
        shift: mean(&xs.iter().map(|m| m.shift).collect::<Vec<_>>()),
        pixels: xs.iter().map(|m| m.pixels).sum(),
    })
}

fn agg_recon(xs: Vec<ReconMetrics>) -> Option<ReconMetrics> {
    if xs.is_empty() {
        return None;
    }
    Some(ReconMetrics {
        accuracy: mean(&xs.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
        completeness: mean(&xs.iter().map(|m| m.completeness).collect::<Vec<_>>()),
        normal_consistency: mean(&xs.iter().map(|m| m.normal_consistency).collect::<Vec<_>>()),
        pred_points: xs.iter().map(|m| m.pred_points).sum(),
        gt_points: xs.iter().map(|m| m.gt_points).sum(),
    })
}

pub fn summarize(sequences: &[SequenceScores]) -> SummaryScores {
    SummaryScores {
        sequences: sequences.len(),
        coord_rmse: agg_f64(sequences.iter().filter_map(|s| s.coord_rmse).collect()),
        correspondence: agg_f64(sequences.iter().filter_map(|s| s.correspondence).collect()),
        normal: agg_normal(sequences.iter().filter_map(|s| s.normal).collect()),
        radius: agg_scaled(sequences.iter().filter_map(|s| s.radius).collect()),
        depth: agg_scaled(sequences.iter().filter_map(|s| s.depth).collect()),
        recon: agg_recon(sequences.iter().filter_map(|s| s.recon).collect()),
    }
}

/// Runs one-step inference per requested attribute and scores the results.
/// Radius uses absolute values (the normalization record pins the scale);
/// local depth, derived from predicted global coordinates per frame, uses the
/// scale/shift-aligned protocol. Reconstruction pairs predicted coordinates
/// with predicted normals when available, ground-truth normals otherwise.
pub fn evaluate_sequence(
    model: &Model,
    sample: &SequenceSample,
    schedule: &NoiseSchedule,
    attributes: &[Attribute],
) -> Result<SequenceScores, EvalError> {
    if attributes.is_empty() {
        return Err(EvalError::Config("no attributes to evaluate".into()));
    }
    let mut scores = SequenceScores {
        id: sample.id.clone(),
        frames: sample.frames(),
        coord_rmse: None,
        correspondence: None,
        normal: None,
        radius: None,
        depth: None,
        recon: None,
    };
    let missing = |a: Attribute| EvalError::Config(format!("sample {} lacks {a:?} maps", sample.id));
    let mut preds: HashMap<Attribute, Vec<GeoMap>> = HashMap::new();
    for &attr in attributes {
        let gt = sample.attr(attr).ok_or_else(|| missing(attr))?;
        let batch = build_tokens(sample, attr, &model.config)?;
        let out = one_step_infer(model, &batch.layout, &batch.rgb, attr, schedule)?;
        if scores.correspondence.is_none() && batch.layout.mode != Conditioning::ChannelConcat {
            scores.correspondence = Some(correspondence_score(&out.attention, &batch.layout)?);
        }
        let maps =
            tokens_to_maps(&out.tokens, attr, &sample.normalization, model.config.patch, gt)?;
        preds.insert(attr, maps);
    }
    if let Some(pred) = preds.get(&Attribute::Normal) {
        scores.normal =
            Some(normal_angular_metrics(pred, sample.attr(Attribute::Normal).unwrap())?);
    }
    if let Some(pred) = preds.get(&Attribute::Radius) {
        let (ps, gs) = masked_scalars(pred, sample.attr(Attribute::Radius).unwrap())?;
        scores.radius = Some(scaled_metrics(&ps, &gs, false)?);
    }
    if let Some(pred) = preds.get(&Attribute::Coord) {
        let gt = sample.attr(Attribute::Coord).unwrap();
        scores.coord_rmse = Some(coord_rmse(pred, gt)?);
        if let Some(gt_depth) = sample.attr(Attribute::Depth) {
            let anchor = &sample.extrinsics[0];
            let mut locals = Vec::with_capacity(pred.len());
            for (f, m) in pred.iter().enumerate() {
                locals.push(global_to_local_depth(m, &sample.extrinsics[f], anchor)?);
            }
            let (ps, gs) = masked_scalars(&locals, gt_depth)?;
            scores.depth = Some(scaled_metrics(&ps, &gs, true)?);
        }
        if let Some(gt_normals) = sample.attr(Attribute::Normal) {
            let pred_normals =
                preds.get(&Attribute::Normal).map(|v| v.as_slice()).unwrap_or(gt_normals);
            let pred_cloud = cloud_from_maps(pred, pred_normals)?;
            let gt_cloud = cloud_from_maps(gt, gt_normals)?;
            scores.recon = Some(recon_metrics(&pred_cloud, &gt_cloud)?);
        }
    }
    Ok(scores)
}

pub fn evaluate_dataset(
    model: &Model,
    samples: &[SequenceSample],
    schedule: &NoiseSchedule,
    attributes: &[Attribute],
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty("no sequences to evaluate".into()));
    }
    let sequences = samples
        .iter()
        .map(|s| evaluate_sequence(model, s, schedule, attributes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport { summary: summarize(&sequences), sequences })
}

/// Unit-normalized mean of every valid ground-truth normal; the natural
/// constant predictor to measure a model against.
pub fn mean_normal_of(samples: &[SequenceSample]) -> Result<[f64; 3], EvalError> {
    let mut acc = [0.0f64; 3];
    let mut count = 0usize;
    for s in samples {
        let maps = s
            .attr(Attribute::Normal)
            .ok_or_else(|| EvalError::Config(format!("sample {} lacks Normal maps", s.id)))?;
        for m in maps {
            for v in 0..m.height {
                for u in 0..m.width {
                    if !m.masked(v, u) {
                        continue;
                    }
                    let p = m.pixel(v, u);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(EvalError::Empty("no valid normals to average".into()));
    }
    let n = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
    if n < 1e-12 {
        return Ok([0.0, 0.0, -1.0]);
    }
    Ok([acc[0] / n, acc[1] / n, acc[2] / n])
}

/// Scores a constant normal prediction the same way a model run is scored:
/// per-sequence metrics averaged over sequences.
pub fn constant_normal_scores(
    normal: [f64; 3],
    samples: &[SequenceSample],
) -> Result<NormalMetrics, EvalError> {
    let mut per_seq = Vec::with_capacity(samples.len());
    for s in samples {
        let gt = s
            .attr(Attribute::Normal)
            .ok_or_else(|| EvalError::Config(format!("sample {} lacks Normal maps", s.id)))?;
        let pred: Vec<GeoMap> = gt
            .iter()
            .map(|g| {
                let mut m = GeoMap::new(Attribute::Normal, g.height, g.width);
                m.mask.copy_from_slice(&g.mask);
                for v in 0..g.height {
                    for u in 0..g.width {
                        if m.masked(v, u) {
                            for c in 0..3 {
                                m.set(v, u, c, normal[c] as f32);
                            }
                        }
                    }
                }
                m
            })
            .collect();
        per_seq.push(normal_angular_metrics(&pred, gt)?);
    }
    agg_normal(per_seq).ok_or_else(|| EvalError::Empty("no sequences to score".into()))
}

/// Median of every valid ground-truth radius across the given samples.
pub fn median_radius_of(samples: &[SequenceSample]) -> Result<f64, EvalError> {
    let mut radii = Vec::new();
    for s in samples {
        let maps = s
            .attr(Attribute::Radius)
            .ok_or_else(|| EvalError::Config(format!("sample {} lacks Radius maps", s.id)))?;
        for m in maps {
            for v in 0..m.height {
                for u in 0..m.width {
                    if m.masked(v, u) {
                        radii.push(m.at(v, u, 0) as f64);
                    }
                }
            }
        }
    }
    if radii.is_empty() {
        return Err(EvalError::Empty("no valid radii for a median".into()));
    }
    radii.sort_by(f64::total_cmp);
    Ok(median(&radii))
}

/// Scores a constant radius prediction through the same absolute-value path
/// used for model radius scores.
pub fn constant_radius_scores(
    radius: f64,
    samples: &[SequenceSample],
) -> Result<ScaledMetrics, EvalError> {
    let mut per_seq = Vec::with_capacity(samples.len());
    for s in samples {
        let gt = s
            .attr(Attribute::Radius)
            .ok_or_else(|| EvalError::Config(format!("sample {} lacks Radius maps", s.id)))?;
        let (_, gs) = masked_scalars(gt, gt)?;
        let ps = vec![radius; gs.len()];
        per_seq.push(scaled_metrics(&ps, &gs, false)?);
    }
    agg_scaled(per_seq).ok_or_else(|| EvalError::Empty("no sequences to score".into()))
}
