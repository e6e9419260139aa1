//! Ray-cast rendering of box-room scenes.
//!
//! Per pixel (v, u) the camera ray is ((u-cx)/fx, (v-cy)/fy, 1) in the
//! camera frame, so the hit parameter t equals the z-depth directly. Shading
//! is flat Lambertian with the face normal: albedo * (ambient +
//! (1-ambient) * max(0, n . -light)). Brightness depends only on the face,
//! never on the viewpoint, so a surface point renders to bit-identical color
//! in every frame that sees it.

use nalgebra::Vector3;

use super::scene::Scene;
use crate::geometry::{Attribute, Extrinsics, GeoMap, GeometryError, Intrinsics};

/// Hits closer than this are ignored (guards self-intersection at t = 0).
const T_MIN: f64 = 1e-9;
/// Ray components below this magnitude are treated as parallel to the slab.
const D_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    /// Unit axis face normal, world frame, pointing against the ray.
    pub normal_world: Vector3<f64>,
    pub albedo: [f64; 3],
}

fn axis_unit(a: usize, sign: f64) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    v[a] = sign;
    v
}

/// Nearest surface along origin + t*dir for t > T_MIN; None when the ray
/// escapes through the open ceiling. `dir` need not be normalized; t is in
/// units of |dir|.
pub fn cast_ray(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for b in &scene.boxes {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut enter_axis = 0usize;
        for a in 0..3 {
            if dir[a].abs() < D_EPS {
                if origin[a] < b.min[a] || origin[a] > b.max[a] {
                    t_enter = f64::INFINITY;
                    break;
                }
                continue;
            }
            let (t0, t1) = {
                let ta = (b.min[a] - origin[a]) / dir[a];
                let tb = (b.max[a] - origin[a]) / dir[a];
                if ta < tb {
                    (ta, tb)
                } else {
                    (tb, ta)
                }
            };
            if t0 > t_enter {
                t_enter = t0;
                enter_axis = a;
            }
            t_exit = t_exit.min(t1);
        }
        if t_enter > t_exit || t_enter <= T_MIN || !t_enter.is_finite() {
            continue;
        }
        if best.map_or(true, |h| t_enter < h.t) {
            // Entering through the min face when the ray moves +, so the
            // outward normal opposes the ray on that axis.
            let sign = if dir[enter_axis] > 0.0 { -1.0 } else { 1.0 };
            best = Some(Hit { t: t_enter, normal_world: axis_unit(enter_axis, sign), albedo: b.albedo });
        }
    }
    // Room: cameras live inside, so the relevant intersection is the exit
    // point; its inward face normal opposes the ray.
    let mut t_room = f64::INFINITY;
    let mut room_axis = 0usize;
    let mut room_sign = 0.0;
    for a in 0..3 {
        if dir[a].abs() < D_EPS {
            continue;
        }
        let wall = if dir[a] > 0.0 { scene.room_half[a] } else { -scene.room_half[a] };
        let t = (wall - origin[a]) / dir[a];
        if t > T_MIN && t < t_room {
            t_room = t;
            room_axis = a;
            room_sign = if dir[a] > 0.0 { -1.0 } else { 1.0 };
        }
    }
    if t_room.is_finite() && best.map_or(true, |h| t_room < h.t) {
        let escapes_top = scene.open_top && room_axis == 1 && room_sign < 0.0;
        if escapes_top {
            best = None;
        } else {
            best = Some(Hit {
                t: t_room,
                normal_world: axis_unit(room_axis, room_sign),
                albedo: scene.wall_albedo,
            });
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub rgb: GeoMap,
    pub depth: GeoMap,
    /// Camera-frame unit normals, oriented toward the viewer.
    pub normal_cam: GeoMap,
}

pub fn render_frame(
    scene: &Scene,
    k: &Intrinsics,
    e: &Extrinsics,
    width: usize,
    height: usize,
) -> Result<RenderedFrame, GeometryError> {
    k.validate(width, height)?;
    let mut rgb = GeoMap::new(Attribute::Rgb, height, width);
    let mut depth = GeoMap::new(Attribute::Depth, height, width);
    let mut normal_cam = GeoMap::new(Attribute::Normal, height, width);
    let r = e.rotation();
    let rt = r.transpose();
    let origin = e.camera_center();
    for v in 0..height {
        for u in 0..width {
            let d_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let d_world = rt * d_cam;
            match cast_ray(scene, &origin, &d_world) {
                Some(hit) => {
                    let lambert = hit.normal_world.dot(&-scene.light_dir).max(0.0);
                    let b = scene.ambient + (1.0 - scene.ambient) * lambert;
                    for c in 0..3 {
                        rgb.set(v, u, c, (hit.albedo[c] * b).clamp(0.0, 1.0) as f32);
                    }
                    depth.set(v, u, 0, hit.t as f32);
                    let n = r * hit.normal_world;
                    normal_cam.set(v, u, 0, n.x as f32);
                    normal_cam.set(v, u, 1, n.y as f32);
                    normal_cam.set(v, u, 2, n.z as f32);
                }
                None => {
                    rgb.set_mask(v, u, false);
                    depth.set_mask(v, u, false);
                    normal_cam.set_mask(v, u, false);
                }
            }
        }
    }
    Ok(RenderedFrame { rgb, depth, normal_cam })
}
