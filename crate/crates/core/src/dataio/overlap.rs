//! Pairwise view-overlap estimation on subsampled depth maps.
//!
//! The directed ratio i->j unprojects every OVERLAP_SUBSAMPLE-th valid pixel
//! of frame i, projects it into frame j, and counts landings that fall on a
//! valid pixel of j whose stored depth agrees within OCCLUSION_REL_TOL
//! (relative to j's depth, nearest-pixel lookup). The symmetric score is the
//! mean of the two directions.

use super::{DataIoError, SequenceSample};
use crate::geometry::{project_point, unproject, Attribute, Extrinsics, GeoMap, Intrinsics};
use nalgebra::Vector3;

/// Step between sampled pixels along each axis.
pub const OVERLAP_SUBSAMPLE: usize = 4;
/// Relative depth agreement required to count a landing as visible.
pub const OCCLUSION_REL_TOL: f64 = 0.03;

/// Borrowed per-frame geometry needed by the overlap estimator.
#[derive(Clone, Copy)]
pub struct FrameView<'a> {
    pub depth: &'a GeoMap,
    pub intrinsics: &'a Intrinsics,
    pub extrinsics: &'a Extrinsics,
}

impl<'a> FrameView<'a> {
    pub fn from_sample(s: &'a SequenceSample, frame: usize) -> Result<Self, DataIoError> {
        let depth = s
            .attr(Attribute::Depth)
            .and_then(|stack| stack.get(frame))
            .ok_or_else(|| DataIoError::BadSequence {
                id: s.id.clone(),
                reason: format!("no depth map for frame {frame}"),
            })?;
        Ok(Self { depth, intrinsics: &s.intrinsics[frame], extrinsics: &s.extrinsics[frame] })
    }
}

/// Fraction of frame a's sampled valid pixels that are visible in frame b;
/// 0.0 when a has no valid samples.
pub fn overlap_ratio(a: FrameView, b: FrameView) -> Result<f64, DataIoError> {
    let coords = unproject(a.depth, a.intrinsics)?;
    let mut total = 0usize;
    let mut seen = 0usize;
    for v in (0..coords.height).step_by(OVERLAP_SUBSAMPLE) {
        for u in (0..coords.width).step_by(OVERLAP_SUBSAMPLE) {
            if !coords.masked(v, u) {
                continue;
            }
            total += 1;
            let p = coords.pixel(v, u);
            // Working frame is camera a, so a's extrinsics act as the anchor.
            let proj = project_point(
                Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64),
                b.extrinsics,
                a.extrinsics,
                b.intrinsics,
            );
            if !proj.valid {
                continue;
            }
            let ub = proj.u.round();
            let vb = proj.v.round();
            if ub < 0.0 || vb < 0.0 || ub >= b.depth.width as f64 || vb >= b.depth.height as f64 {
                continue;
            }
            let (ub, vb) = (ub as usize, vb as usize);
            if !b.depth.masked(vb, ub) {
                continue;
            }
            let db = b.depth.at(vb, ub, 0) as f64;
            if db > 0.0 && (proj.depth - db).abs() <= OCCLUSION_REL_TOL * db {
                seen += 1;
            }
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(seen as f64 / total as f64)
}

/// Symmetric overlap scores for one sequence; row-major n x n.
#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    n: usize,
    scores: Vec<f64>,
}

impl OverlapMatrix {
    /// Builds a matrix from explicit symmetric scores; diagonal is forced
    /// to 1. Intended for tests and small fixtures.
    pub fn from_scores(n: usize, mut scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), n * n, "score buffer must be n*n");
        for i in 0..n {
            scores[i * n + i] = 1.0;
        }
        Self { n, scores }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }
}

pub fn overlap_matrix(frames: &[FrameView]) -> Result<OverlapMatrix, DataIoError> {
    let n = frames.len();
    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        scores[i * n + i] = 1.0;
        for j in i + 1..n {
            let ij = overlap_ratio(frames[i], frames[j])?;
            let ji = overlap_ratio(frames[j], frames[i])?;
            let s = (ij + ji) / 2.0;
            scores[i * n + j] = s;
            scores[j * n + i] = s;
        }
    }
    Ok(OverlapMatrix { n, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::test_util::synthetic_sample;
    use nalgebra::{Rotation3, Vector3};

    fn flat_depth(h: usize, w: usize, d: f32) -> GeoMap {
        let mut m = GeoMap::new(Attribute::Depth, h, w);
        m.values.iter_mut().for_each(|x| *x = d);
        m
    }

    fn centered_intrinsics(h: usize, w: usize) -> Intrinsics {
        Intrinsics { fx: w as f64, fy: w as f64, cx: (w as f64 - 1.0) / 2.0, cy: (h as f64 - 1.0) / 2.0 }
    }

    #[test]
    fn identical_frames_fully_overlap() {
        let d = flat_depth(8, 12, 3.0);
        let k = centered_intrinsics(8, 12);
        let e = Extrinsics::identity();
        let fv = FrameView { depth: &d, intrinsics: &k, extrinsics: &e };
        assert_eq!(overlap_ratio(fv, fv).unwrap(), 1.0);
    }

    #[test]
    fn opposite_facing_frames_do_not_overlap() {
        let d = flat_depth(8, 12, 3.0);
        let k = centered_intrinsics(8, 12);
        let e0 = Extrinsics::identity();
        let e1 = Extrinsics::from_rotation_translation(
            Rotation3::from_euler_angles(0.0, std::f64::consts::PI, 0.0).into_inner(),
            Vector3::zeros(),
        )
        .unwrap();
        let a = FrameView { depth: &d, intrinsics: &k, extrinsics: &e0 };
        let b = FrameView { depth: &d, intrinsics: &k, extrinsics: &e1 };
        assert_eq!(overlap_ratio(a, b).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_yields_zero_not_nan() {
        let mut d = flat_depth(8, 12, 3.0);
        d.mask.iter_mut().for_each(|m| *m = 0);
        let k = centered_intrinsics(8, 12);
        let e = Extrinsics::identity();
        let fv = FrameView { depth: &d, intrinsics: &k, extrinsics: &e };
        let r = overlap_ratio(fv, fv).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn occluder_in_target_frame_blocks_overlap() {
        // Same pose, but b claims everything sits at depth 1.0 while a's
        // points live at 3.0: depth disagreement means "not visible".
        let da = flat_depth(8, 12, 3.0);
        let db = flat_depth(8, 12, 1.0);
        let k = centered_intrinsics(8, 12);
        let e = Extrinsics::identity();
        let a = FrameView { depth: &da, intrinsics: &k, extrinsics: &e };
        let b = FrameView { depth: &db, intrinsics: &k, extrinsics: &e };
        assert_eq!(overlap_ratio(a, b).unwrap(), 0.0);
    }

    #[test]
    fn shifted_camera_gives_partial_overlap() {
        let d = flat_depth(16, 24, 3.0);
        let k = centered_intrinsics(16, 24);
        let e0 = Extrinsics::identity();
        // Shift right by 1.5 world units: part of the plane leaves the view.
        // World-to-camera translation -R*c with R = I.
        let e1 = Extrinsics::from_rotation_translation(
            Rotation3::identity().into_inner(),
            Vector3::new(-1.5, 0.0, 0.0),
        )
        .unwrap();
        let a = FrameView { depth: &d, intrinsics: &k, extrinsics: &e0 };
        let b = FrameView { depth: &d, intrinsics: &k, extrinsics: &e1 };
        let r = overlap_ratio(a, b).unwrap();
        assert!(r > 0.0 && r < 1.0, "expected partial overlap, got {r}");
    }

    #[test]
    fn matrix_is_symmetric_with_unit_diagonal() {
        let s = synthetic_sample("seq", 3, 8, 12, 7);
        let views: Vec<FrameView> =
            (0..3).map(|f| FrameView::from_sample(&s, f).unwrap()).collect();
        let m = overlap_matrix(&views).unwrap();
        assert_eq!(m.len(), 3);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!((0.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }
}
