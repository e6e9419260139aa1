//! Camera path sampling: orbit arcs, dolly pushes, and fixed-eye look-at
//! jitter, all expressed as per-frame (eye, target) pairs inside the room.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::scene::Scene;
use crate::geometry::{Extrinsics, GeometryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Orbit,
    Dolly,
    LookatJitter,
}

#[derive(Debug, Clone, Copy)]
pub struct PoseSpec {
    pub eye: Vector3<f64>,
    pub target: Vector3<f64>,
}

/// World-to-camera pose looking from `eye` toward `target`, world up +y.
/// Camera basis: z forward, x = up x z, y = z x x (right-handed, det +1).
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Extrinsics, GeometryError> {
    let f = target - eye;
    if f.norm() < 1e-9 {
        return Err(GeometryError::BadShape("look_at: eye equals target".into()));
    }
    let z = f.normalize();
    let mut up = Vector3::new(0.0, 1.0, 0.0);
    if up.cross(&z).norm() < 1e-6 {
        up = Vector3::new(0.0, 0.0, 1.0);
    }
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Extrinsics::from_rotation_translation(r, -(r * eye))
}

/// Per-frame poses for one trajectory attempt. `shrink` in (0, 1] scales the
/// inter-frame motion; retries pass smaller values to ease the overlap
/// constraint.
pub fn sample_trajectory(
    kind: TrajectoryKind,
    frames: usize,
    scene: &Scene,
    rng: &mut impl Rng,
    shrink: f64,
) -> Vec<PoseSpec> {
    let h = &scene.room_half;
    let m = h.x.min(h.z);
    let target = Vector3::new(
        rng.gen_range(-0.4..=0.4),
        rng.gen_range(-0.2..=0.4),
        rng.gen_range(-0.4..=0.4),
    );
    match kind {
        TrajectoryKind::Orbit => {
            let rho = rng.gen_range(1.1..=(0.55 * m));
            let y_off = rng.gen_range(-0.2 * h.y..=0.45 * h.y);
            let theta0 = rng.gen_range(0.0..std::f64::consts::TAU);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let dtheta = sign * rng.gen_range(0.07..=0.20) * shrink;
            (0..frames)
                .map(|f| {
                    let th = theta0 + f as f64 * dtheta;
                    let eye = target + Vector3::new(rho * th.cos(), y_off, rho * th.sin());
                    PoseSpec { eye, target }
                })
                .collect()
        }
        TrajectoryKind::Dolly => {
            let rho = rng.gen_range(0.6 * m..=(0.8 * m).min(m - 0.75));
            let y_off = rng.gen_range(-0.2 * h.y..=0.4 * h.y);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let eye0 = target + Vector3::new(rho * theta.cos(), y_off, rho * theta.sin());
            let toward = (target - eye0).normalize();
            let side = Vector3::new(0.0, 1.0, 0.0).cross(&toward).normalize();
            let mut step = rng.gen_range(0.10..=0.28) * shrink;
            if frames > 1 {
                step = step.min(0.55 * rho / (frames - 1) as f64);
            }
            let drift = rng.gen_range(-0.05..=0.05) * shrink;
            (0..frames)
                .map(|f| PoseSpec {
                    eye: eye0 + toward * (f as f64 * step) + side * (f as f64 * drift),
                    target,
                })
                .collect()
        }
        TrajectoryKind::LookatJitter => {
            let rho = rng.gen_range(0.5 * m..=(0.7 * m).min(m - 0.75));
            let y_off = rng.gen_range(-0.2 * h.y..=0.45 * h.y);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let eye = target + Vector3::new(rho * theta.cos(), y_off, rho * theta.sin());
            let mut looked = target;
            (0..frames)
                .map(|f| {
                    if f > 0 {
                        looked += Vector3::new(
                            rng.gen_range(-0.22..=0.22),
                            rng.gen_range(-0.12..=0.12),
                            rng.gen_range(-0.22..=0.22),
                        ) * shrink;
                    }
                    PoseSpec { eye, target: looked }
                })
                .collect()
        }
    }
}
