//! Multi-view regrouping: pick the most-overlapping partners for every query
//! frame and rebuild pseudo-sequences anchored at the query.

use std::path::{Path, PathBuf};

use super::overlap::{overlap_matrix, FrameView, OverlapMatrix};
use super::{DataIoError, Dataset, DatasetWriter, NormalizationRecord, SequenceSample};
use crate::geometry::{
    radius_map, to_global_coords, to_global_normals, to_local_coords, to_local_normals, Attribute,
    GeoMap,
};

/// One group per query frame: the query first, then the `num_view - 1`
/// frames with the highest overlap score, ties resolved toward lower frame
/// indices.
pub fn group_views(m: &OverlapMatrix, num_view: usize) -> Result<Vec<Vec<usize>>, DataIoError> {
    if num_view < 2 {
        return Err(DataIoError::BadNumView(num_view));
    }
    let n = m.len();
    if n < num_view {
        return Err(DataIoError::InsufficientFrames { need: num_view, have: n });
    }
    let mut groups = Vec::with_capacity(n);
    for q in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != q).collect();
        others.sort_by(|&a, &b| {
            m.get(q, b).partial_cmp(&m.get(q, a)).unwrap().then(a.cmp(&b))
        });
        let mut group = Vec::with_capacity(num_view);
        group.push(q);
        group.extend_from_slice(&others[..num_view - 1]);
        groups.push(group);
    }
    Ok(groups)
}

/// Rebuilds a pseudo-sequence from `order` (query first). Frame `order[0]`
/// becomes the new anchor: coordinates and normals are re-expressed in its
/// camera frame, the normalization record is refit, and values are washed
/// onto the new record's grid. Radius maps are recomputed from the washed
/// coordinates. When the anchor and frame set are unchanged the stored
/// values come back bitwise identical (washing is idempotent at fixed
/// scale), though the refit center may move by one grid quantum.
pub fn regroup_sequence(
    sample: &SequenceSample,
    order: &[usize],
    new_id: String,
) -> Result<SequenceSample, DataIoError> {
    let f = sample.frames();
    let fail = |reason: String| DataIoError::BadSequence { id: sample.id.clone(), reason };
    if order.is_empty() {
        return Err(fail("empty frame order".into()));
    }
    let mut seen = vec![false; f];
    for &i in order {
        if i >= f {
            return Err(fail(format!("frame {i} out of range ({f} frames)")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(fail(format!("frame {i} repeated in order")));
        }
    }
    let e_old = &sample.extrinsics[0];
    let e_new = &sample.extrinsics[order[0]];

    let mut maps = std::collections::BTreeMap::new();
    for (&attribute, stack) in &sample.maps {
        let rebuilt: Result<Vec<GeoMap>, DataIoError> = order
            .iter()
            .map(|&i| -> Result<GeoMap, DataIoError> {
                let m = &stack[i];
                Ok(match attribute {
                    // Stored in the old anchor's frame, move to the new one.
                    Attribute::Coord => to_global_coords(m, e_old, e_new)?,
                    Attribute::Normal => to_global_normals(m, e_old, e_new)?,
                    // Recomputed below once the washed coords exist.
                    Attribute::Radius => m.clone(),
                    // Per-frame data, independent of the anchor.
                    _ => m.clone(),
                })
            })
            .collect();
        maps.insert(attribute, rebuilt?);
    }

    let normalization = if let Some(coords) = maps.get(&Attribute::Coord) {
        let record = fit_record(coords)?;
        let coords = maps.get_mut(&Attribute::Coord).unwrap();
        for map in coords.iter_mut() {
            wash_coord_map(map, &record);
        }
        let washed: Vec<GeoMap> = coords.clone();
        if let Some(radii) = maps.get_mut(&Attribute::Radius) {
            for (r, c) in radii.iter_mut().zip(&washed) {
                *r = radius_map(c)?;
                wash_radius_map(r, &record);
            }
        }
        record
    } else {
        sample.normalization
    };

    let out = SequenceSample {
        id: new_id,
        height: sample.height,
        width: sample.width,
        intrinsics: order.iter().map(|&i| sample.intrinsics[i]).collect(),
        extrinsics: order.iter().map(|&i| sample.extrinsics[i]).collect(),
        maps,
        normalization,
    };
    out.validate()?;
    Ok(out)
}

/// Re-expresses geometry targets in each frame's own camera frame instead of
/// the shared anchor frame: coordinates and normals rotate per frame, radii
/// become distances to each frame's camera center, and the normalization
/// record is refit over the per-frame coordinates. Cameras and image-space
/// maps are untouched. The per-frame counterpart of the default
/// globally-anchored samples, for target-frame comparisons.
pub fn localize_sample(sample: &SequenceSample) -> Result<SequenceSample, DataIoError> {
    let fail = |reason: String| DataIoError::BadSequence { id: sample.id.clone(), reason };
    if sample.frames() == 0 {
        return Err(fail("no frames".into()));
    }
    let anchor = sample.extrinsics[0];
    let mut maps = std::collections::BTreeMap::new();
    for (&attribute, stack) in &sample.maps {
        let rebuilt: Result<Vec<GeoMap>, DataIoError> = stack
            .iter()
            .enumerate()
            .map(|(i, m)| -> Result<GeoMap, DataIoError> {
                let e_i = &sample.extrinsics[i];
                Ok(match attribute {
                    Attribute::Coord => to_local_coords(m, e_i, &anchor)?,
                    Attribute::Normal => to_local_normals(m, e_i, &anchor)?,
                    // Recomputed below once the washed coords exist.
                    Attribute::Radius => m.clone(),
                    // Image-space data does not depend on the target frame.
                    _ => m.clone(),
                })
            })
            .collect();
        maps.insert(attribute, rebuilt?);
    }

    let normalization = if let Some(coords) = maps.get(&Attribute::Coord) {
        let record = fit_record(coords)?;
        let coords = maps.get_mut(&Attribute::Coord).unwrap();
        for map in coords.iter_mut() {
            wash_coord_map(map, &record);
        }
        let washed: Vec<GeoMap> = coords.clone();
        if let Some(radii) = maps.get_mut(&Attribute::Radius) {
            for (r, c) in radii.iter_mut().zip(&washed) {
                *r = radius_map(c)?;
                wash_radius_map(r, &record);
            }
        }
        record
    } else {
        sample.normalization
    };

    let out = SequenceSample {
        id: sample.id.clone(),
        height: sample.height,
        width: sample.width,
        intrinsics: sample.intrinsics.clone(),
        extrinsics: sample.extrinsics.clone(),
        maps,
        normalization,
    };
    out.validate()?;
    Ok(out)
}

/// Fits a normalization record to the masked pixels of a coord stack.
pub fn fit_record(coords: &[GeoMap]) -> Result<NormalizationRecord, DataIoError> {
    let mut points = Vec::new();
    let mut max_radius = 0.0f64;
    for map in coords {
        for v in 0..map.height {
            for u in 0..map.width {
                if !map.masked(v, u) {
                    continue;
                }
                let p = map.pixel(v, u);
                let p = [p[0] as f64, p[1] as f64, p[2] as f64];
                max_radius = max_radius.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
                points.push(p);
            }
        }
    }
    NormalizationRecord::fit(points, max_radius)
}

pub fn wash_coord_map(map: &mut GeoMap, record: &NormalizationRecord) {
    for v in 0..map.height {
        for u in 0..map.width {
            if !map.masked(v, u) {
                continue;
            }
            let p = map.pixel(v, u);
            let w = record.wash_coord([p[0] as f64, p[1] as f64, p[2] as f64]);
            map.set(v, u, 0, w[0] as f32);
            map.set(v, u, 1, w[1] as f32);
            map.set(v, u, 2, w[2] as f32);
        }
    }
}

pub fn wash_radius_map(map: &mut GeoMap, record: &NormalizationRecord) {
    for v in 0..map.height {
        for u in 0..map.width {
            if map.masked(v, u) {
                let r = record.wash_radius(map.at(v, u, 0) as f64);
                map.set(v, u, 0, r as f32);
            }
        }
    }
}

/// Regroups every sequence of a dataset into `num_view`-frame
/// pseudo-sequences (one per query frame) and writes them under `out_root`.
/// Returns the new manifest path and the number of sequences written.
pub fn regroup_dataset(
    ds: &Dataset,
    num_view: usize,
    out_root: &Path,
) -> Result<(PathBuf, usize), DataIoError> {
    let mut writer = DatasetWriter::create(out_root)?;
    let mut written = 0usize;
    for item in ds.stream() {
        let sample = item?;
        let views: Result<Vec<FrameView>, DataIoError> =
            (0..sample.frames()).map(|f| FrameView::from_sample(&sample, f)).collect();
        let matrix = overlap_matrix(&views?)?;
        for group in group_views(&matrix, num_view)? {
            let new_id = format!("{}-q{:02}", sample.id, group[0]);
            writer.add(&regroup_sequence(&sample, &group, new_id)?)?;
            written += 1;
        }
    }
    let manifest = writer.finish_default_splits()?;
    Ok((manifest, written))
}
