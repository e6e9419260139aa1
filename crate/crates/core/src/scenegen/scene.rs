//! Scene sampling: an axis-aligned room (five walls, optionally no ceiling)
//! holding a handful of axis-aligned boxes, one directional light, and a
//! flat ambient term. World frame: y up, room centered at the origin.

use nalgebra::Vector3;
use rand::Rng;

use super::SceneConfig;

#[derive(Debug, Clone)]
pub struct BoxPrim {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub albedo: [f64; 3],
}

impl BoxPrim {
    pub fn contains(&self, p: &Vector3<f64>, pad: f64) -> bool {
        (0..3).all(|a| p[a] > self.min[a] - pad && p[a] < self.max[a] + pad)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    /// Room interior spans [-room_half, room_half] per axis.
    pub room_half: Vector3<f64>,
    /// True: rays exiting through the ceiling (+y) hit nothing.
    pub open_top: bool,
    pub wall_albedo: [f64; 3],
    pub boxes: Vec<BoxPrim>,
    /// Unit direction the light travels (points generally downward).
    pub light_dir: Vector3<f64>,
    pub ambient: f64,
}

pub fn build_scene(cfg: &SceneConfig, rng: &mut impl Rng) -> Scene {
    let room_half = Vector3::new(
        rng.gen_range(cfg.room_half_x[0]..=cfg.room_half_x[1]),
        rng.gen_range(cfg.room_half_y[0]..=cfg.room_half_y[1]),
        rng.gen_range(cfg.room_half_z[0]..=cfg.room_half_z[1]),
    );
    let wall_albedo = [
        rng.gen_range(0.3..=0.8),
        rng.gen_range(0.3..=0.8),
        rng.gen_range(0.3..=0.8),
    ];
    let count = rng.gen_range(cfg.box_count[0]..=cfg.box_count[1]);
    let mut boxes = Vec::with_capacity(count);
    // Rejection sampling keeps boxes inside the walls and off the central
    // camera play area; a bounded pass so odd configs cannot spin forever.
    let mut tries = 0;
    while boxes.len() < count && tries < count * 40 {
        tries += 1;
        let size = Vector3::new(
            rng.gen_range(cfg.box_size[0]..=cfg.box_size[1]),
            rng.gen_range(cfg.box_size[0]..=cfg.box_size[1]),
            rng.gen_range(cfg.box_size[0]..=cfg.box_size[1]),
        );
        let margin = 0.05;
        let mut center = Vector3::zeros();
        let mut ok = true;
        for a in 0..3 {
            let span = room_half[a] - size[a] / 2.0 - margin;
            if span <= 0.0 {
                ok = false;
                break;
            }
            center[a] = rng.gen_range(-span..=span);
        }
        if !ok {
            continue;
        }
        let b = BoxPrim { min: center - size / 2.0, max: center + size / 2.0, albedo: [0.0; 3] };
        // Keep the center clear: reject boxes whose closest point to the
        // origin is inside the clear radius.
        let mut closest = Vector3::zeros();
        for a in 0..3 {
            closest[a] = 0.0f64.clamp(b.min[a], b.max[a]);
        }
        if closest.norm_squared() < cfg.clear_radius * cfg.clear_radius {
            continue;
        }
        let albedo = [
            rng.gen_range(cfg.box_albedo[0]..=cfg.box_albedo[1]),
            rng.gen_range(cfg.box_albedo[0]..=cfg.box_albedo[1]),
            rng.gen_range(cfg.box_albedo[0]..=cfg.box_albedo[1]),
        ];
        boxes.push(BoxPrim { albedo, ..b });
    }
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let down: f64 = rng.gen_range(0.55..=0.95);
    let horiz = (1.0 - down * down).sqrt();
    let light_dir = Vector3::new(phi.cos() * horiz, -down, phi.sin() * horiz);
    let ambient = rng.gen_range(cfg.ambient[0]..=cfg.ambient[1]);
    Scene { room_half, open_top: cfg.open_top, wall_albedo, boxes, light_dir, ambient }
}
