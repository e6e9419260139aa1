//! Camera models, per-pixel geometry maps, and the transforms that move
//! geometry between camera frames and the sequence-global frame.
//!
//! Conventions, fixed once here and relied on everywhere else:
//! - pixels index as (v = row, u = col), origin at the top-left, and a pixel
//!   covers its integer coordinate (no half-pixel offset);
//! - cameras look down +z in a right-handed frame;
//! - extrinsics are world-to-camera rigid transforms;
//! - the global frame of a sequence is the camera frame of its first image,
//!   so for frame 1 the camera-to-global transform is the identity by
//!   definition and is applied as such, bit for bit.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("intrinsics invalid: {0}")]
    BadIntrinsics(String),
    #[error("extrinsics not a rigid world-to-camera transform: {0}")]
    NonRigidExtrinsics(String),
    #[error("map shape invalid: {0}")]
    BadShape(String),
    #[error("{attribute:?} map has non-finite value at pixel ({v},{u}) channel {c}")]
    NonFiniteValue { attribute: Attribute, v: usize, u: usize, c: usize },
    #[error("{attribute:?} map must be positive where masked, got {value} at pixel ({v},{u})")]
    NonPositiveValue { attribute: Attribute, v: usize, u: usize, value: f32 },
    #[error("rgb out of [0,1] at pixel ({v},{u}) channel {c}: {value}")]
    RgbOutOfRange { v: usize, u: usize, c: usize, value: f32 },
    #[error("normal at pixel ({v},{u}) has norm {norm}, expected 1 within {tol}")]
    NotUnitNormal { v: usize, u: usize, norm: f64, tol: f64 },
}

/// Pinhole intrinsics; pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self, width: usize, height: usize) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::BadIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let (w, h) = (width as f64, height as f64);
        if !(self.cx >= 0.0 && self.cx <= w - 1.0 && self.cy >= 0.0 && self.cy <= h - 1.0) {
            return Err(GeometryError::BadIntrinsics(format!(
                "principal point ({}, {}) outside {w}x{h} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }
}

const RIGID_TOL: f64 = 1e-6;

/// World-to-camera rigid transform stored as a full 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    m: Matrix4<f64>,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics { m: Matrix4::identity() }
    }

    /// Validates rigidity: orthonormal rotation block with det +1 and a
    /// (0,0,0,1) bottom row.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonRigidExtrinsics("non-finite entries".into()));
        }
        let bottom = m.row(3);
        if bottom != Vector4::new(0.0, 0.0, 0.0, 1.0).transpose() {
            return Err(GeometryError::NonRigidExtrinsics(format!(
                "bottom row {:?} must be (0,0,0,1)",
                [bottom[0], bottom[1], bottom[2], bottom[3]]
            )));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > RIGID_TOL {
            return Err(GeometryError::NonRigidExtrinsics(format!(
                "rotation block deviates from orthonormal by {ortho_err:.3e}"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > RIGID_TOL {
            return Err(GeometryError::NonRigidExtrinsics(format!("determinant {det}, need +1")));
        }
        Ok(Extrinsics { m })
    }

    pub fn from_rotation_translation(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, GeometryError> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::from_matrix(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Rigid inverse [R^T | -R^T t].
    pub fn inverse_matrix(&self) -> Matrix4<f64> {
        let r = self.rotation();
        let t = self.translation();
        let rt = r.transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-rt * t));
        m
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -self.rotation().transpose() * self.translation()
    }

    /// Transform taking points in this camera's frame into `to`'s frame.
    /// With `to` = the sequence anchor this is the camera-to-global map.
    pub fn frame_to(&self, to: &Extrinsics) -> Matrix4<f64> {
        to.m * self.inverse_matrix()
    }
}

/// Per-pixel map attributes; numeric tags match the map file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Rgb,
    Depth,
    Coord,
    Normal,
    Radius,
    Mask,
}

impl Attribute {
    pub fn tag(self) -> u8 {
        match self {
            Attribute::Rgb => 0,
            Attribute::Depth => 1,
            Attribute::Coord => 2,
            Attribute::Normal => 3,
            Attribute::Radius => 4,
            Attribute::Mask => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Attribute::Rgb,
            1 => Attribute::Depth,
            2 => Attribute::Coord,
            3 => Attribute::Normal,
            4 => Attribute::Radius,
            5 => Attribute::Mask,
            _ => return None,
        })
    }

    pub fn channels(self) -> usize {
        match self {
            Attribute::Rgb | Attribute::Coord | Attribute::Normal => 3,
            Attribute::Depth | Attribute::Radius | Attribute::Mask => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Rgb => "rgb",
            Attribute::Depth => "depth",
            Attribute::Coord => "coord",
            Attribute::Normal => "normal",
            Attribute::Radius => "radius",
            Attribute::Mask => "mask",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "rgb" => Attribute::Rgb,
            "depth" => Attribute::Depth,
            "coord" => Attribute::Coord,
            "normal" => Attribute::Normal,
            "radius" => Attribute::Radius,
            "mask" => Attribute::Mask,
            _ => return None,
        })
    }
}

/// Tolerance for the unit-norm invariant on stored normal maps; generous
/// enough for f32 storage rounding.
pub const NORMAL_UNIT_TOL: f64 = 1e-4;
/// Looser tolerance accepted on *input* normals before transforming.
pub const NORMAL_INPUT_TOL: f64 = 1e-3;

/// One per-pixel attribute image with a validity mask. Values are row-major
/// (v, u, c) and stored as f32, matching the on-disk format exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoMap {
    pub attribute: Attribute,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
    /// 1 = valid, 0 = ignore. Geometry at masked-out pixels is meaningless.
    pub mask: Vec<u8>,
}

impl GeoMap {
    pub fn new(attribute: Attribute, height: usize, width: usize) -> Self {
        let channels = attribute.channels();
        GeoMap {
            attribute,
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
            mask: vec![1; height * width],
        }
    }

    pub fn at(&self, v: usize, u: usize, c: usize) -> f32 {
        self.values[(v * self.width + u) * self.channels + c]
    }

    pub fn set(&mut self, v: usize, u: usize, c: usize, val: f32) {
        self.values[(v * self.width + u) * self.channels + c] = val;
    }

    pub fn masked(&self, v: usize, u: usize) -> bool {
        self.mask[v * self.width + u] == 1
    }

    pub fn set_mask(&mut self, v: usize, u: usize, valid: bool) {
        self.mask[v * self.width + u] = valid as u8;
    }

    pub fn pixel(&self, v: usize, u: usize) -> &[f32] {
        let i = (v * self.width + u) * self.channels;
        &self.values[i..i + self.channels]
    }

    pub fn valid_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Checks the container invariants for this attribute.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.channels != self.attribute.channels() {
            return Err(GeometryError::BadShape(format!(
                "{:?} expects {} channels, map has {}",
                self.attribute,
                self.attribute.channels(),
                self.channels
            )));
        }
        if self.values.len() != self.height * self.width * self.channels {
            return Err(GeometryError::BadShape(format!(
                "value buffer {} != {}x{}x{}",
                self.values.len(),
                self.height,
                self.width,
                self.channels
            )));
        }
        if self.mask.len() != self.height * self.width {
            return Err(GeometryError::BadShape(format!(
                "mask buffer {} != {}x{}",
                self.mask.len(),
                self.height,
                self.width
            )));
        }
        for v in 0..self.height {
            for u in 0..self.width {
                for c in 0..self.channels {
                    let x = self.at(v, u, c);
                    if !x.is_finite() {
                        return Err(GeometryError::NonFiniteValue { attribute: self.attribute, v, u, c });
                    }
                }
                if !self.masked(v, u) {
                    continue;
                }
                match self.attribute {
                    Attribute::Depth | Attribute::Radius => {
                        let x = self.at(v, u, 0);
                        if x <= 0.0 {
                            return Err(GeometryError::NonPositiveValue {
                                attribute: self.attribute,
                                v,
                                u,
                                value: x,
                            });
                        }
                    }
                    Attribute::Rgb => {
                        for c in 0..3 {
                            let x = self.at(v, u, c);
                            if !(0.0..=1.0).contains(&x) {
                                return Err(GeometryError::RgbOutOfRange { v, u, c, value: x });
                            }
                        }
                    }
                    Attribute::Normal => {
                        let p = self.pixel(v, u);
                        let norm =
                            ((p[0] as f64).powi(2) + (p[1] as f64).powi(2) + (p[2] as f64).powi(2)).sqrt();
                        if (norm - 1.0).abs() > NORMAL_UNIT_TOL {
                            return Err(GeometryError::NotUnitNormal { v, u, norm, tol: NORMAL_UNIT_TOL });
                        }
                    }
                    Attribute::Coord | Attribute::Mask => {}
                }
            }
        }
        Ok(())
    }
}

/// Back-projects a depth map to camera-frame coordinates:
/// x = (u-cx)/fx * d, y = (v-cy)/fy * d, z = d.
pub fn unproject(depth: &GeoMap, k: &Intrinsics) -> Result<GeoMap, GeometryError> {
    if depth.attribute != Attribute::Depth {
        return Err(GeometryError::BadShape(format!("unproject wants a depth map, got {:?}", depth.attribute)));
    }
    k.validate(depth.width, depth.height)?;
    let mut out = GeoMap::new(Attribute::Coord, depth.height, depth.width);
    out.mask.copy_from_slice(&depth.mask);
    for v in 0..depth.height {
        for u in 0..depth.width {
            if !depth.masked(v, u) {
                continue;
            }
            let d = depth.at(v, u, 0) as f64;
            let x = (u as f64 - k.cx) / k.fx * d;
            let y = (v as f64 - k.cy) / k.fy * d;
            out.set(v, u, 0, x as f32);
            out.set(v, u, 1, y as f32);
            out.set(v, u, 2, d as f32);
        }
    }
    Ok(out)
}

/// Maps camera-frame coordinates of frame i into the sequence-global frame
/// (the anchor camera's frame). When `e_i` equals the anchor bit for bit the
/// input is returned unchanged: the anchor frame *is* the global frame.
pub fn to_global_coords(
    coords_cam: &GeoMap,
    e_i: &Extrinsics,
    e_anchor: &Extrinsics,
) -> Result<GeoMap, GeometryError> {
    if coords_cam.attribute != Attribute::Coord {
        return Err(GeometryError::BadShape(format!(
            "to_global_coords wants a coord map, got {:?}",
            coords_cam.attribute
        )));
    }
    if e_i.matrix() == e_anchor.matrix() {
        return Ok(coords_cam.clone());
    }
    let m = e_i.frame_to(e_anchor);
    let mut out = coords_cam.clone();
    for v in 0..coords_cam.height {
        for u in 0..coords_cam.width {
            if !coords_cam.masked(v, u) {
                continue;
            }
            let p = coords_cam.pixel(v, u);
            let q = m * Vector4::new(p[0] as f64, p[1] as f64, p[2] as f64, 1.0);
            out.set(v, u, 0, q.x as f32);
            out.set(v, u, 1, q.y as f32);
            out.set(v, u, 2, q.z as f32);
        }
    }
    Ok(out)
}

/// Rotates camera-frame normals of frame i into the global frame. Inputs must
/// be unit within 1e-3; outputs are renormalized against f64 rounding.
pub fn to_global_normals(
    normals_cam: &GeoMap,
    e_i: &Extrinsics,
    e_anchor: &Extrinsics,
) -> Result<GeoMap, GeometryError> {
    if normals_cam.attribute != Attribute::Normal {
        return Err(GeometryError::BadShape(format!(
            "to_global_normals wants a normal map, got {:?}",
            normals_cam.attribute
        )));
    }
    for v in 0..normals_cam.height {
        for u in 0..normals_cam.width {
            if !normals_cam.masked(v, u) {
                continue;
            }
            let p = normals_cam.pixel(v, u);
            let norm = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2) + (p[2] as f64).powi(2)).sqrt();
            if (norm - 1.0).abs() > NORMAL_INPUT_TOL {
                return Err(GeometryError::NotUnitNormal { v, u, norm, tol: NORMAL_INPUT_TOL });
            }
        }
    }
    if e_i.matrix() == e_anchor.matrix() {
        return Ok(normals_cam.clone());
    }
    let r = e_anchor.rotation() * e_i.rotation().transpose();
    let mut out = normals_cam.clone();
    for v in 0..normals_cam.height {
        for u in 0..normals_cam.width {
            if !normals_cam.masked(v, u) {
                continue;
            }
            let p = normals_cam.pixel(v, u);
            let n = r * Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            let n = n / n.norm();
            out.set(v, u, 0, n.x as f32);
            out.set(v, u, 1, n.y as f32);
            out.set(v, u, 2, n.z as f32);
        }
    }
    Ok(out)
}

/// Maps global (anchor-frame) coordinates back into camera i's frame; the
/// inverse of [`to_global_coords`].
pub fn to_local_coords(
    coords_global: &GeoMap,
    e_i: &Extrinsics,
    e_anchor: &Extrinsics,
) -> Result<GeoMap, GeometryError> {
    if coords_global.attribute != Attribute::Coord {
        return Err(GeometryError::BadShape(format!(
            "to_local_coords wants a coord map, got {:?}",
            coords_global.attribute
        )));
    }
    if e_i.matrix() == e_anchor.matrix() {
        return Ok(coords_global.clone());
    }
    let m = e_anchor.frame_to(e_i);
    let mut out = coords_global.clone();
    for v in 0..coords_global.height {
        for u in 0..coords_global.width {
            if !coords_global.masked(v, u) {
                continue;
            }
            let p = coords_global.pixel(v, u);
            let q = m * Vector4::new(p[0] as f64, p[1] as f64, p[2] as f64, 1.0);
            out.set(v, u, 0, q.x as f32);
            out.set(v, u, 1, q.y as f32);
            out.set(v, u, 2, q.z as f32);
        }
    }
    Ok(out)
}

/// Rotates global-frame normals back into camera i's frame; the inverse of
/// [`to_global_normals`]. Inputs must be unit within 1e-3; outputs are
/// renormalized against f64 rounding.
pub fn to_local_normals(
    normals_global: &GeoMap,
    e_i: &Extrinsics,
    e_anchor: &Extrinsics,
) -> Result<GeoMap, GeometryError> {
    if normals_global.attribute != Attribute::Normal {
        return Err(GeometryError::BadShape(format!(
            "to_local_normals wants a normal map, got {:?}",
            normals_global.attribute
        )));
    }
    for v in 0..normals_global.height {
        for u in 0..normals_global.width {
            if !normals_global.masked(v, u) {
                continue;
            }
            let p = normals_global.pixel(v, u);
            let norm = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2) + (p[2] as f64).powi(2)).sqrt();
            if (norm - 1.0).abs() > NORMAL_INPUT_TOL {
                return Err(GeometryError::NotUnitNormal { v, u, norm, tol: NORMAL_INPUT_TOL });
            }
        }
    }
    if e_i.matrix() == e_anchor.matrix() {
        return Ok(normals_global.clone());
    }
    let r = e_i.rotation() * e_anchor.rotation().transpose();
    let mut out = normals_global.clone();
    for v in 0..normals_global.height {
        for u in 0..normals_global.width {
            if !normals_global.masked(v, u) {
                continue;
            }
            let p = normals_global.pixel(v, u);
            let n = r * Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            let n = n / n.norm();
            out.set(v, u, 0, n.x as f32);
            out.set(v, u, 1, n.y as f32);
            out.set(v, u, 2, n.z as f32);
        }
    }
    Ok(out)
}

/// Distance of each global coordinate to the global origin, elementwise
/// sqrt(x^2 + y^2 + z^2) at 64-bit.
pub fn radius_map(coords_global: &GeoMap) -> Result<GeoMap, GeometryError> {
    if coords_global.attribute != Attribute::Coord {
        return Err(GeometryError::BadShape(format!(
            "radius_map wants a coord map, got {:?}",
            coords_global.attribute
        )));
    }
    let mut out = GeoMap::new(Attribute::Radius, coords_global.height, coords_global.width);
    out.mask.copy_from_slice(&coords_global.mask);
    for v in 0..coords_global.height {
        for u in 0..coords_global.width {
            if !coords_global.masked(v, u) {
                continue;
            }
            let p = coords_global.pixel(v, u);
            let r = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2) + (p[2] as f64).powi(2)).sqrt();
            out.set(v, u, 0, r as f32);
        }
    }
    Ok(out)
}

/// Projection of one global-frame point into camera i.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// False when the point sits at or behind the camera plane.
    pub valid: bool,
}

/// Projects a single global coordinate into camera i's pixel plane.
pub fn project_point(
    g: Vector3<f64>,
    e_i: &Extrinsics,
    e_anchor: &Extrinsics,
    k: &Intrinsics,
) -> Projection {
    let m = e_anchor.frame_to(e_i); // global (anchor frame) -> camera i
    let p = m * Vector4::new(g.x, g.y, g.z, 1.0);
    if p.z <= 0.0 {
        return Projection { u: 0.0, v: 0.0, depth: p.z, valid: false };
    }
    Projection {
        u: k.fx * p.x / p.z + k.cx,
        v: k.fy * p.y / p.z + k.cy,
        depth: p.z,
        valid: true,
    }
}

/// Per-pixel projections of a global coordinate map into camera i.
pub fn project(
    coords_global: &GeoMap,
    e_i: &Extrinsics,
    e_anchor: &Extrinsics,
    k: &Intrinsics,
) -> Result<Vec<Projection>, GeometryError> {
    if coords_global.attribute != Attribute::Coord {
        return Err(GeometryError::BadShape(format!(
            "project wants a coord map, got {:?}",
            coords_global.attribute
        )));
    }
    let mut out = Vec::with_capacity(coords_global.height * coords_global.width);
    for v in 0..coords_global.height {
        for u in 0..coords_global.width {
            if !coords_global.masked(v, u) {
                out.push(Projection { u: 0.0, v: 0.0, depth: 0.0, valid: false });
                continue;
            }
            let p = coords_global.pixel(v, u);
            out.push(project_point(
                Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64),
                e_i,
                e_anchor,
                k,
            ));
        }
    }
    Ok(out)
}

/// z-component of each global coordinate expressed in camera i's frame; the
/// local (per-frame) depth counterpart of a global coordinate map.
pub fn global_to_local_depth(
    coords_global: &GeoMap,
    e_i: &Extrinsics,
    e_anchor: &Extrinsics,
) -> Result<GeoMap, GeometryError> {
    if coords_global.attribute != Attribute::Coord {
        return Err(GeometryError::BadShape(format!(
            "global_to_local_depth wants a coord map, got {:?}",
            coords_global.attribute
        )));
    }
    let m = e_anchor.frame_to(e_i);
    let mut out = GeoMap::new(Attribute::Depth, coords_global.height, coords_global.width);
    out.mask.copy_from_slice(&coords_global.mask);
    for v in 0..coords_global.height {
        for u in 0..coords_global.width {
            if !coords_global.masked(v, u) {
                continue;
            }
            let p = coords_global.pixel(v, u);
            let q = m * Vector4::new(p[0] as f64, p[1] as f64, p[2] as f64, 1.0);
            out.set(v, u, 0, q.z as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth_map(h: usize, w: usize, d: f32) -> GeoMap {
        let mut m = GeoMap::new(Attribute::Depth, h, w);
        m.values.iter_mut().for_each(|x| *x = d);
        m
    }

    #[test]
    fn unproject_identity_camera_center_pixel() {
        // fx=fy=1, cx=cy=0, depth 2 at pixel (0,0) -> camera coords (0,0,2)
        let d = depth_map(1, 1, 2.0);
        let k = Intrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 };
        let c = unproject(&d, &k).unwrap();
        assert_eq!(c.pixel(0, 0), &[0.0, 0.0, 2.0]);
        // global equals camera under the identity anchor
        let e = Extrinsics::identity();
        let g = to_global_coords(&c, &e, &e).unwrap();
        assert_eq!(g.values, c.values);
    }

    #[test]
    fn unproject_known_pixel() {
        // pixel (u,v) = (2,1), d = 3, fx=fy=2, cx=cy=1 -> (1.5, 0, 3)
        let d = depth_map(2, 3, 3.0);
        let k = Intrinsics { fx: 2.0, fy: 2.0, cx: 1.0, cy: 1.0 };
        let c = unproject(&d, &k).unwrap();
        assert_eq!(c.pixel(1, 2), &[1.5, 0.0, 3.0]);
    }

    #[test]
    fn unproject_matches_dense_inverse_intrinsics_oracle() {
        // oracle: coords = K^{-1} [u v 1]^T * d with K inverted numerically
        let k = Intrinsics { fx: 37.5, fy: 24.0, cx: 3.2, cy: 2.1 };
        let mut d = GeoMap::new(Attribute::Depth, 5, 7);
        for v in 0..5 {
            for u in 0..7 {
                d.set(v, u, 0, 0.5 + (v * 7 + u) as f32 * 0.21);
            }
        }
        let c = unproject(&d, &k).unwrap();
        let km = Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
        let kinv = km.try_inverse().unwrap();
        for v in 0..5 {
            for u in 0..7 {
                let expect = kinv * Vector3::new(u as f64, v as f64, 1.0) * d.at(v, u, 0) as f64;
                let got = c.pixel(v, u);
                for i in 0..3 {
                    assert!((got[i] as f64 - expect[i]).abs() < 1e-5, "pixel ({v},{u}) ch {i}");
                }
            }
        }
    }

    fn rot_z(a: f64) -> Matrix3<f64> {
        Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn frame_one_transform_is_bitwise_identity() {
        let r = rot_z(0.7);
        let e = Extrinsics::from_rotation_translation(r, Vector3::new(0.3, -0.2, 1.1)).unwrap();
        let mut c = GeoMap::new(Attribute::Coord, 2, 2);
        for (i, v) in c.values.iter_mut().enumerate() {
            *v = (i as f32) * 0.331 - 1.0;
        }
        let g = to_global_coords(&c, &e, &e).unwrap();
        assert!(g.values.iter().zip(&c.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn normals_rotate_with_relative_rotation_only() {
        // anchor = identity, frame i rotated 90 degrees about z. The relative
        // rotation is Rz(-90), taking (1,0,0) to (0,-1,0) in this handedness.
        let e1 = Extrinsics::identity();
        let ei = Extrinsics::from_rotation_translation(
            rot_z(std::f64::consts::FRAC_PI_2),
            Vector3::new(5.0, -2.0, 3.0), // translation must not matter
        )
        .unwrap();
        let mut n = GeoMap::new(Attribute::Normal, 1, 1);
        n.set(0, 0, 0, 1.0);
        let g = to_global_normals(&n, &ei, &e1).unwrap();
        let p = g.pixel(0, 0);
        assert!((p[0] as f64).abs() < 1e-12);
        assert!((p[1] as f64 + 1.0).abs() < 1e-12);
        assert!((p[2] as f64).abs() < 1e-12);
    }

    #[test]
    fn non_unit_normals_are_rejected() {
        let e = Extrinsics::identity();
        let mut n = GeoMap::new(Attribute::Normal, 1, 1);
        n.set(0, 0, 0, 0.9);
        let err = to_global_normals(&n, &e, &e).unwrap_err();
        assert!(matches!(err, GeometryError::NotUnitNormal { .. }), "{err}");
    }

    #[test]
    fn non_rigid_extrinsics_are_rejected() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0; // scale is not rigid
        assert!(matches!(
            Extrinsics::from_matrix(m),
            Err(GeometryError::NonRigidExtrinsics(_))
        ));
        let mut reflect = Matrix4::identity();
        reflect[(0, 0)] = -1.0; // det -1
        assert!(matches!(
            Extrinsics::from_matrix(reflect),
            Err(GeometryError::NonRigidExtrinsics(_))
        ));
    }

    #[test]
    fn radius_matches_elementwise_sqrt_oracle_exactly() {
        let mut c = GeoMap::new(Attribute::Coord, 3, 4);
        for (i, v) in c.values.iter_mut().enumerate() {
            *v = ((i * 13 % 17) as f32) * 0.77 - 4.0;
        }
        let r = radius_map(&c).unwrap();
        for v in 0..3 {
            for u in 0..4 {
                let p = c.pixel(v, u);
                let expect = (((p[0] as f64) * (p[0] as f64))
                    + ((p[1] as f64) * (p[1] as f64))
                    + ((p[2] as f64) * (p[2] as f64)))
                .sqrt() as f32;
                assert_eq!(r.at(v, u, 0).to_bits(), expect.to_bits());
            }
        }
    }

    #[test]
    fn project_unproject_round_trip() {
        let k = Intrinsics { fx: 55.0, fy: 50.0, cx: 3.5, cy: 2.5 };
        let e1 = Extrinsics::from_rotation_translation(rot_z(0.3), Vector3::new(0.1, 0.2, -0.4)).unwrap();
        let ei = Extrinsics::from_rotation_translation(rot_z(-0.5), Vector3::new(-0.7, 0.0, 0.9)).unwrap();
        let mut d = GeoMap::new(Attribute::Depth, 6, 8);
        for v in 0..6 {
            for u in 0..8 {
                d.set(v, u, 0, 1.0 + ((v * 8 + u) as f32) * 0.11);
            }
        }
        let cam = unproject(&d, &k).unwrap();
        let glob = to_global_coords(&cam, &ei, &e1).unwrap();
        let proj = project(&glob, &ei, &e1, &k).unwrap();
        for v in 0..6 {
            for u in 0..8 {
                let p = proj[v * 8 + u];
                assert!(p.valid);
                assert!((p.u - u as f64).abs() < 1e-4, "u {} vs {}", p.u, u);
                assert!((p.v - v as f64).abs() < 1e-4, "v {} vs {}", p.v, v);
                assert!((p.depth - d.at(v, u, 0) as f64).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn behind_camera_projection_is_flagged() {
        let k = Intrinsics { fx: 10.0, fy: 10.0, cx: 2.0, cy: 2.0 };
        let e = Extrinsics::identity();
        let p = project_point(Vector3::new(0.0, 0.0, -1.0), &e, &e, &k);
        assert!(!p.valid);
    }

    #[test]
    fn local_depth_inverts_unprojection() {
        let k = Intrinsics { fx: 40.0, fy: 42.0, cx: 3.5, cy: 2.5 };
        let e1 = Extrinsics::from_rotation_translation(rot_z(1.1), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let ei = Extrinsics::from_rotation_translation(rot_z(-0.2), Vector3::new(0.0, 2.0, -1.0)).unwrap();
        let mut d = GeoMap::new(Attribute::Depth, 4, 6);
        for v in 0..4 {
            for u in 0..6 {
                d.set(v, u, 0, 2.0 + (v as f32) * 0.3 + (u as f32) * 0.05);
            }
        }
        let glob = to_global_coords(&unproject(&d, &k).unwrap(), &ei, &e1).unwrap();
        let back = global_to_local_depth(&glob, &ei, &e1).unwrap();
        for v in 0..4 {
            for u in 0..6 {
                assert!((back.at(v, u, 0) - d.at(v, u, 0)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn local_transforms_invert_the_global_ones() {
        let k = Intrinsics { fx: 30.0, fy: 28.0, cx: 2.5, cy: 1.5 };
        let e1 = Extrinsics::from_rotation_translation(rot_z(0.7), Vector3::new(0.2, -0.1, 0.5)).unwrap();
        let ei = Extrinsics::from_rotation_translation(rot_z(-0.9), Vector3::new(-0.3, 0.4, 1.2)).unwrap();
        let mut d = GeoMap::new(Attribute::Depth, 3, 5);
        for v in 0..3 {
            for u in 0..5 {
                d.set(v, u, 0, 1.5 + (v as f32) * 0.2 + (u as f32) * 0.07);
            }
        }
        let cam = unproject(&d, &k).unwrap();
        let glob = to_global_coords(&cam, &ei, &e1).unwrap();
        let back = to_local_coords(&glob, &ei, &e1).unwrap();
        for v in 0..3 {
            for u in 0..5 {
                for c in 0..3 {
                    assert!(
                        (back.at(v, u, c) - cam.at(v, u, c)).abs() < 1e-4,
                        "coord ({v},{u},{c})"
                    );
                }
            }
        }
        // the anchor's own frame passes through untouched
        let same = to_local_coords(&glob, &e1, &e1).unwrap();
        assert_eq!(same.values, glob.values);

        let mut n = GeoMap::new(Attribute::Normal, 3, 5);
        for v in 0..3 {
            for u in 0..5 {
                let t = (v * 5 + u) as f64 * 0.37;
                n.set(v, u, 0, (t.sin() * 0.6) as f32);
                n.set(v, u, 1, (t.cos() * 0.6) as f32);
                n.set(v, u, 2, -0.8);
            }
        }
        let glob_n = to_global_normals(&n, &ei, &e1).unwrap();
        let back_n = to_local_normals(&glob_n, &ei, &e1).unwrap();
        for v in 0..3 {
            for u in 0..5 {
                for c in 0..3 {
                    assert!(
                        (back_n.at(v, u, c) - n.at(v, u, c)).abs() < 1e-4,
                        "normal ({v},{u},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn masked_out_pixels_stay_masked_through_the_pipeline() {
        let k = Intrinsics { fx: 10.0, fy: 10.0, cx: 1.0, cy: 1.0 };
        let mut d = depth_map(2, 2, 1.5);
        d.set_mask(0, 1, false);
        let c = unproject(&d, &k).unwrap();
        assert!(!c.masked(0, 1));
        let e = Extrinsics::identity();
        let ei = Extrinsics::from_rotation_translation(rot_z(0.4), Vector3::zeros()).unwrap();
        let g = to_global_coords(&c, &ei, &e).unwrap();
        assert!(!g.masked(0, 1));
        let r = radius_map(&g).unwrap();
        assert!(!r.masked(0, 1));
        assert_eq!(r.at(0, 1, 0), 0.0);
    }

    #[test]
    fn map_validation_names_the_offending_pixel() {
        let mut d = depth_map(2, 3, 1.0);
        d.set(1, 2, 0, f32::NAN);
        match d.validate() {
            Err(GeometryError::NonFiniteValue { v, u, .. }) => {
                assert_eq!((v, u), (1, 2));
            }
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
        let mut d2 = depth_map(1, 1, -0.5);
        assert!(matches!(d2.validate(), Err(GeometryError::NonPositiveValue { .. })));
        d2.set_mask(0, 0, false);
        // masked-out pixels are exempt from value constraints
        d2.validate().unwrap();
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics { fx: 0.0, fy: 1.0, cx: 0.0, cy: 0.0 }.validate(4, 4).is_err());
        assert!(Intrinsics { fx: 1.0, fy: 1.0, cx: 9.0, cy: 0.0 }.validate(4, 4).is_err());
        Intrinsics { fx: 1.0, fy: 1.0, cx: 1.5, cy: 1.5 }.validate(4, 4).unwrap();
    }
}
