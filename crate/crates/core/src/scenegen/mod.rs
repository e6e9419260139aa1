//! Procedural scene generation: random box-filled rooms rendered into
//! RGB/depth/normal maps along short camera trajectories, then lifted into
//! sequence samples with global-frame geometry targets.

mod generate;
mod render;
mod scene;
mod trajectory;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::DataIoError;
use crate::geometry::GeometryError;

pub use generate::{generate_dataset, generate_sequence};
pub use render::{cast_ray, render_frame, Hit, RenderedFrame};
pub use scene::{build_scene, BoxPrim, Scene};
pub use trajectory::{look_at, sample_trajectory, PoseSpec, TrajectoryKind};

#[derive(Debug, Error)]
pub enum SceneGenError {
    #[error("config: {0}")]
    Config(String),
    #[error("seed {seed}: no valid trajectory after {attempts} attempts")]
    RetriesExhausted { seed: u64, attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    DataIo(#[from] DataIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryChoice {
    Orbit,
    Dolly,
    LookatJitter,
    /// Pick one of the three kinds per sequence.
    Mixed,
}

/// Knobs for one generated corpus. Ranges are inclusive [lo, hi] bounds for
/// per-scene uniform draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Horizontal field of view range in degrees.
    pub fov_deg: [f64; 2],
    pub room_half_x: [f64; 2],
    pub room_half_y: [f64; 2],
    pub room_half_z: [f64; 2],
    /// Rays escaping through the ceiling hit nothing (masked-out pixels).
    pub open_top: bool,
    pub box_count: [usize; 2],
    pub box_size: [f64; 2],
    pub box_albedo: [f64; 2],
    /// Central sphere kept free of boxes so cameras have room to move.
    pub clear_radius: f64,
    pub ambient: [f64; 2],
    pub trajectory: TrajectoryChoice,
    /// Minimum symmetric overlap between consecutive frames.
    pub min_overlap: f64,
    /// Minimum fraction of valid pixels per frame.
    pub min_valid_fraction: f64,
    /// Trajectory attempts per sequence before giving up; motion shrinks on
    /// each retry.
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 48,
            frames: 4,
            fov_deg: [55.0, 75.0],
            room_half_x: [2.5, 4.0],
            room_half_y: [1.8, 2.5],
            room_half_z: [2.5, 4.0],
            open_top: true,
            box_count: [4, 10],
            box_size: [0.3, 1.2],
            box_albedo: [0.15, 0.95],
            clear_radius: 1.0,
            ambient: [0.15, 0.30],
            trajectory: TrajectoryChoice::Mixed,
            min_overlap: 0.4,
            min_valid_fraction: 0.5,
            max_retries: 8,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneGenError> {
        let err = |m: String| Err(SceneGenError::Config(m));
        if self.width < 8 || self.height < 8 {
            return err(format!("image {}x{} too small", self.width, self.height));
        }
        if self.frames < 2 {
            return err(format!("need at least 2 frames, got {}", self.frames));
        }
        for (name, r) in [
            ("fov_deg", self.fov_deg),
            ("room_half_x", self.room_half_x),
            ("room_half_y", self.room_half_y),
            ("room_half_z", self.room_half_z),
            ("box_size", self.box_size),
            ("box_albedo", self.box_albedo),
            ("ambient", self.ambient),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return err(format!("{name} range {r:?} invalid"));
            }
        }
        if self.fov_deg[0] < 30.0 || self.fov_deg[1] > 120.0 {
            return err(format!("fov range {:?} outside (30, 120)", self.fov_deg));
        }
        if self.box_count[0] > self.box_count[1] {
            return err(format!("box_count range {:?} invalid", self.box_count));
        }
        if self.box_albedo[0] < 0.0 || self.box_albedo[1] > 1.0 {
            return err(format!("box_albedo {:?} outside [0, 1]", self.box_albedo));
        }
        if self.ambient[0] < 0.0 || self.ambient[1] > 1.0 {
            return err(format!("ambient {:?} outside [0, 1]", self.ambient));
        }
        if !(0.0..=1.0).contains(&self.min_overlap) {
            return err(format!("min_overlap {} outside [0, 1]", self.min_overlap));
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return err(format!("min_valid_fraction {} outside [0, 1]", self.min_valid_fraction));
        }
        if self.max_retries == 0 {
            return err("max_retries must be at least 1".into());
        }
        if self.box_size[0] <= 0.0 {
            return err(format!("box_size {:?} must be positive", self.box_size));
        }
        if self.room_half_x[0] < 1.5 || self.room_half_y[0] < 1.0 || self.room_half_z[0] < 1.5 {
            return err("room too small for camera clearance".into());
        }
        Ok(())
    }
}
