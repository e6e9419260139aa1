//! Patch tokenization and the mapping between maps and model tensors.
//!
//! Patch rows are laid out frame-major: token f * (rows*cols) + r * cols + c
//! covers pixels [r*p..(r+1)*p) x [c*p..(c+1)*p) of frame f; within a row the
//! order is (dy, dx, channel). Geometry values enter the model normalized by
//! the sequence record; masked-out pixels contribute 0 in normalized space.

use super::{Conditioning, ModelConfig, ModelError};
use crate::dataio::{NormalizationRecord, SequenceSample};
use crate::geometry::{Attribute, GeoMap};
use crate::numerics::Tensor;

/// Discrete token position: which frame and which patch cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionId {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

/// Token bookkeeping for one sequence under one conditioning mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub mode: Conditioning,
    pub frames: usize,
    /// Patch grid height (H / patch).
    pub rows: usize,
    /// Patch grid width (W / patch).
    pub cols: usize,
}

impl TokenLayout {
    pub fn new(
        cfg: &ModelConfig,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, ModelError> {
        if frames == 0 {
            return Err(ModelError::Shape("layout needs at least one frame".into()));
        }
        if height % cfg.patch != 0 || width % cfg.patch != 0 {
            return Err(ModelError::Shape(format!(
                "image {height}x{width} not divisible by patch {}",
                cfg.patch
            )));
        }
        Ok(Self { mode: cfg.mode, frames, rows: height / cfg.patch, cols: width / cfg.patch })
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    /// Token count of one modality across all frames.
    pub fn image_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    /// Rows of the assembled model input.
    pub fn total_tokens(&self) -> usize {
        match self.mode {
            Conditioning::ChannelConcat => self.image_tokens(),
            _ => 2 * self.image_tokens(),
        }
    }

    /// Position ids for every input token, in input row order.
    pub fn position_ids(&self) -> Vec<PositionId> {
        let mut ids = Vec::with_capacity(self.total_tokens());
        for f in 0..self.frames {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    ids.push(PositionId { frame: f, row: r, col: c });
                }
            }
        }
        match self.mode {
            Conditioning::ChannelConcat => {}
            Conditioning::SharedPos => {
                // Geometry tokens reuse their rgb partner's id verbatim.
                let copy = ids.clone();
                ids.extend(copy);
            }
            Conditioning::SeqConcat => {
                let offset: Vec<PositionId> = ids
                    .iter()
                    .map(|p| PositionId { frame: p.frame + self.frames, ..*p })
                    .collect();
                ids.extend(offset);
            }
        }
        ids
    }
}

/// Splits one frame's channel image [h*w*c] into patch rows [(h/p)*(w/p), p*p*c].
pub fn patchify(channels: &[f64], height: usize, width: usize, c: usize, patch: usize) -> Vec<f64> {
    assert_eq!(channels.len(), height * width * c, "channel buffer size");
    assert!(height % patch == 0 && width % patch == 0, "patch must divide the image");
    let (rows, cols) = (height / patch, width / patch);
    let mut out = Vec::with_capacity(channels.len());
    for r in 0..rows {
        for cc in 0..cols {
            for dy in 0..patch {
                for dx in 0..patch {
                    let v = r * patch + dy;
                    let u = cc * patch + dx;
                    let base = (v * width + u) * c;
                    out.extend_from_slice(&channels[base..base + c]);
                }
            }
        }
    }
    out
}

/// Inverse of `patchify`: patch rows back to a channel image [h*w*c].
pub fn unpatchify(tokens: &[f64], rows: usize, cols: usize, c: usize, patch: usize) -> Vec<f64> {
    let (height, width) = (rows * patch, cols * patch);
    assert_eq!(tokens.len(), height * width * c, "token buffer size");
    let mut out = vec![0.0; tokens.len()];
    let row_len = patch * patch * c;
    for r in 0..rows {
        for cc in 0..cols {
            let tok = &tokens[(r * cols + cc) * row_len..(r * cols + cc + 1) * row_len];
            let mut i = 0;
            for dy in 0..patch {
                for dx in 0..patch {
                    let v = r * patch + dy;
                    let u = cc * patch + dx;
                    let base = (v * width + u) * c;
                    out[base..base + c].copy_from_slice(&tok[i..i + c]);
                    i += c;
                }
            }
        }
    }
    out
}

/// RGB map to a [h*w*3] channel buffer (raw values, masked-out pixels 0).
pub fn rgb_channels(map: &GeoMap) -> Vec<f64> {
    map.values.iter().map(|&v| v as f64).collect()
}

/// Geometry map to normalized [h*w*3] channels. Coordinates pass through the
/// record, normals are already unit, radii normalize into (0,1] and are
/// replicated across the three channels. Masked-out pixels become 0.
pub fn normalized_geo_channels(
    map: &GeoMap,
    record: &NormalizationRecord,
) -> Result<Vec<f64>, ModelError> {
    let n = map.height * map.width;
    let mut out = vec![0.0f64; n * 3];
    match map.attribute {
        Attribute::Coord => {
            for i in 0..n {
                if map.mask[i] == 0 {
                    continue;
                }
                let p = &map.values[i * 3..i * 3 + 3];
                let q = record.normalize_coord([p[0] as f64, p[1] as f64, p[2] as f64]);
                out[i * 3..i * 3 + 3].copy_from_slice(&q);
            }
        }
        Attribute::Normal => {
            for i in 0..n {
                if map.mask[i] == 0 {
                    continue;
                }
                for ch in 0..3 {
                    out[i * 3 + ch] = map.values[i * 3 + ch] as f64;
                }
            }
        }
        Attribute::Radius => {
            for i in 0..n {
                if map.mask[i] == 0 {
                    continue;
                }
                let q = record.normalize_radius(map.values[i] as f64);
                out[i * 3..i * 3 + 3].fill(q);
            }
        }
        other => return Err(ModelError::UnsupportedAttribute(other)),
    }
    Ok(out)
}

/// Turns predicted normalized channels [h*w*3] back into a value map.
/// Coordinates are denormalized through the record, normals renormalized to
/// unit length, radii averaged over the three channels and denormalized.
/// Predicted values are reported as-is; they need not satisfy dataset
/// invariants like positivity.
pub fn prediction_to_map(
    pred: &[f64],
    attribute: Attribute,
    record: &NormalizationRecord,
    height: usize,
    width: usize,
    mask: &[u8],
) -> Result<GeoMap, ModelError> {
    let n = height * width;
    if pred.len() != n * 3 || mask.len() != n {
        return Err(ModelError::Shape(format!(
            "prediction buffer {} / mask {} for {height}x{width}",
            pred.len(),
            mask.len()
        )));
    }
    if !matches!(attribute, Attribute::Coord | Attribute::Normal | Attribute::Radius) {
        return Err(ModelError::UnsupportedAttribute(attribute));
    }
    let mut map = GeoMap::new(attribute, height, width);
    map.mask.copy_from_slice(mask);
    for i in 0..n {
        if mask[i] == 0 {
            continue;
        }
        let p = &pred[i * 3..i * 3 + 3];
        match attribute {
            Attribute::Coord => {
                let q = record.denormalize_coord([p[0], p[1], p[2]]);
                for ch in 0..3 {
                    map.values[i * 3 + ch] = q[ch] as f32;
                }
            }
            Attribute::Normal => {
                let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if norm > 1e-12 {
                    for ch in 0..3 {
                        map.values[i * 3 + ch] = (p[ch] / norm) as f32;
                    }
                } else {
                    map.values[i * 3 + 2] = -1.0;
                }
            }
            Attribute::Radius => {
                let mean = (p[0] + p[1] + p[2]) / 3.0;
                map.values[i] = record.denormalize_radius(mean) as f32;
            }
            _ => unreachable!(),
        }
    }
    Ok(map)
}

/// Clean patch tokens for one sequence and one target attribute.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub layout: TokenLayout,
    /// [image_tokens, patch_dim] raw rgb patches.
    pub rgb: Tensor,
    /// [image_tokens, patch_dim] normalized clean geometry patches.
    pub geo: Tensor,
}

/// Rgb-side tokenization alone. Inference needs only this; sequences without
/// stored geometry still tokenize.
pub fn build_rgb_tokens(
    sample: &SequenceSample,
    cfg: &ModelConfig,
) -> Result<(TokenLayout, Tensor), ModelError> {
    let layout = TokenLayout::new(cfg, sample.frames(), sample.height, sample.width)?;
    let rgb_maps = sample
        .attr(Attribute::Rgb)
        .ok_or_else(|| ModelError::Shape(format!("sample {} lacks Rgb maps", sample.id)))?;
    let mut rows = Vec::with_capacity(layout.image_tokens() * cfg.patch_dim());
    for f in 0..sample.frames() {
        rows.extend(patchify(
            &rgb_channels(&rgb_maps[f]),
            sample.height,
            sample.width,
            3,
            cfg.patch,
        ));
    }
    Ok((layout, Tensor::from_vec(vec![layout.image_tokens(), cfg.patch_dim()], rows)))
}

pub fn build_tokens(
    sample: &SequenceSample,
    attribute: Attribute,
    cfg: &ModelConfig,
) -> Result<TokenBatch, ModelError> {
    let (layout, rgb) = build_rgb_tokens(sample, cfg)?;
    let geo_maps = sample
        .attr(attribute)
        .ok_or_else(|| ModelError::Shape(format!("sample {} lacks {attribute:?} maps", sample.id)))?;
    let mut geo_rows = Vec::new();
    for f in 0..sample.frames() {
        geo_rows.extend(patchify(
            &normalized_geo_channels(&geo_maps[f], &sample.normalization)?,
            sample.height,
            sample.width,
            3,
            cfg.patch,
        ));
    }
    let geo = Tensor::from_vec(vec![layout.image_tokens(), cfg.patch_dim()], geo_rows);
    Ok(TokenBatch { layout, rgb, geo })
}

/// Assembles the model input from rgb tokens and (possibly noisy) geometry
/// tokens: row concatenation for the two-stream modes, per-token channel
/// stacking for the single-stream mode.
pub fn assemble_input(layout: &TokenLayout, rgb: &Tensor, geo: &Tensor) -> Tensor {
    assert_eq!(rgb.shape(), geo.shape(), "modality shapes must match");
    let n = rgb.shape()[0];
    let w = rgb.shape()[1];
    match layout.mode {
        Conditioning::ChannelConcat => {
            let mut data = Vec::with_capacity(n * 2 * w);
            for i in 0..n {
                data.extend_from_slice(&rgb.data()[i * w..(i + 1) * w]);
                data.extend_from_slice(&geo.data()[i * w..(i + 1) * w]);
            }
            Tensor::from_vec(vec![n, 2 * w], data)
        }
        _ => {
            let mut data = Vec::with_capacity(2 * n * w);
            data.extend_from_slice(rgb.data());
            data.extend_from_slice(geo.data());
            Tensor::from_vec(vec![2 * n, w], data)
        }
    }
}
