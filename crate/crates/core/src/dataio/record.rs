//! Per-sequence value normalization with bitwise-exact round trips.
//!
//! Coordinates are mapped to `(x - center) / 2^log2_scale`, radii to
//! `r / 2^radius_log2_scale`. Both the center and every stored value sit on
//! the dyadic grid `2^(log2_scale - COORD_GRID_BITS)`, so every multiply is a
//! power-of-two scaling and every add/subtract lands on a representable
//! value: normalize/denormalize round-trip bitwise in f64, and washed values
//! survive an f32 file round trip unchanged (grid indices fit in 24 bits).

use serde::{Deserialize, Serialize};

use super::DataIoError;

/// Grid resolution below the scale: quantum = 2^(log2_scale - COORD_GRID_BITS).
pub const COORD_GRID_BITS: i32 = 23;

/// Scales are confined so every quantum stays a normal f64 and shifts below
/// fit in u64.
const MAX_LOG2_SCALE: i32 = 36;

/// Exact power of two for |e| <= 60; built by bit shift, not powi.
fn pow2(e: i32) -> f64 {
    assert!((-60..=60).contains(&e), "pow2 exponent {e} out of range");
    if e >= 0 {
        (1u64 << e) as f64
    } else {
        1.0 / ((1u64 << (-e)) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationRecord {
    /// Center coordinates as integer multiples of the grid quantum.
    pub center_grid: [i64; 3],
    /// Coordinate half-extent exponent: |x - center| <= 2^log2_scale.
    pub log2_scale: i32,
    /// Radius scale exponent: washed radii lie in (0, 2^radius_log2_scale].
    pub radius_log2_scale: i32,
}

impl NormalizationRecord {
    /// Fits a record to a point cloud: center at the bounding-box midpoint
    /// snapped to the grid, scale the smallest power of two covering both the
    /// half-extent and the center magnitude (the latter keeps grid indices in
    /// range). `max_radius` is the largest distance to the global origin.
    pub fn fit(
        points: impl IntoIterator<Item = [f64; 3]>,
        max_radius: f64,
    ) -> Result<Self, DataIoError> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut count = 0usize;
        for p in points {
            for a in 0..3 {
                if !p[a].is_finite() {
                    return Err(DataIoError::Normalization(format!(
                        "non-finite coordinate {} on axis {a}",
                        p[a]
                    )));
                }
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            count += 1;
        }
        if count == 0 {
            return Err(DataIoError::Normalization("no points to fit".into()));
        }
        if !(max_radius.is_finite() && max_radius > 0.0) {
            return Err(DataIoError::Normalization(format!(
                "max radius must be finite and positive, got {max_radius}"
            )));
        }
        let mid: Vec<f64> = (0..3).map(|a| lo[a] + (hi[a] - lo[a]) / 2.0).collect();
        let half = (0..3).map(|a| (hi[a] - lo[a]) / 2.0).fold(0.0f64, f64::max);
        let center_mag = mid.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        // Headroom factor absorbs the half-quantum shift from snapping the
        // center plus the half-quantum wash of each point.
        let need = half.max(center_mag).max(1e-6) * (1.0 + pow2(-18));
        let mut log2_scale = need.log2().ceil() as i32;
        while pow2(log2_scale) < need {
            log2_scale += 1;
        }
        if log2_scale.abs() > MAX_LOG2_SCALE {
            return Err(DataIoError::Normalization(format!(
                "coordinate scale 2^{log2_scale} out of supported range"
            )));
        }
        let inv_quantum = pow2(COORD_GRID_BITS - log2_scale);
        let center_grid = [
            (mid[0] * inv_quantum).round() as i64,
            (mid[1] * inv_quantum).round() as i64,
            (mid[2] * inv_quantum).round() as i64,
        ];
        let mut radius_log2_scale = max_radius.log2().ceil() as i32;
        while pow2(radius_log2_scale) < max_radius {
            radius_log2_scale += 1;
        }
        if radius_log2_scale.abs() > MAX_LOG2_SCALE {
            return Err(DataIoError::Normalization(format!(
                "radius scale 2^{radius_log2_scale} out of supported range"
            )));
        }
        let rec = Self { center_grid, log2_scale, radius_log2_scale };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), DataIoError> {
        if self.log2_scale.abs() > MAX_LOG2_SCALE || self.radius_log2_scale.abs() > MAX_LOG2_SCALE {
            return Err(DataIoError::Normalization(format!(
                "scale exponents ({}, {}) outside +-{MAX_LOG2_SCALE}",
                self.log2_scale, self.radius_log2_scale
            )));
        }
        let limit = 1i64 << COORD_GRID_BITS;
        for (a, &m) in self.center_grid.iter().enumerate() {
            if m.abs() > limit {
                return Err(DataIoError::Normalization(format!(
                    "center grid index {m} on axis {a} exceeds +-2^{COORD_GRID_BITS}"
                )));
            }
        }
        Ok(())
    }

    fn quantum(&self) -> f64 {
        pow2(self.log2_scale - COORD_GRID_BITS)
    }

    fn radius_quantum(&self) -> f64 {
        pow2(self.radius_log2_scale - COORD_GRID_BITS)
    }

    pub fn center(&self) -> [f64; 3] {
        let g = self.quantum();
        [
            self.center_grid[0] as f64 * g,
            self.center_grid[1] as f64 * g,
            self.center_grid[2] as f64 * g,
        ]
    }

    /// Snaps a raw coordinate onto the record's grid. Washed values
    /// normalize, denormalize, and pass through f32 bitwise.
    pub fn wash_coord(&self, p: [f64; 3]) -> [f64; 3] {
        let g = self.quantum();
        let inv = pow2(COORD_GRID_BITS - self.log2_scale);
        let mut out = [0.0; 3];
        for a in 0..3 {
            let n = (p[a] * inv).round() as i64;
            let j = n - self.center_grid[a];
            assert!(
                j.abs() <= 1 << COORD_GRID_BITS,
                "coordinate {} on axis {a} falls outside the fitted range",
                p[a]
            );
            out[a] = n as f64 * g;
        }
        out
    }

    pub fn wash_radius(&self, r: f64) -> f64 {
        let g = self.radius_quantum();
        let n = (r * pow2(COORD_GRID_BITS - self.radius_log2_scale)).round() as i64;
        assert!(
            n >= 1 && n <= 1 << COORD_GRID_BITS,
            "radius {r} falls outside the fitted range"
        );
        n as f64 * g
    }

    /// (x - center) * 2^-log2_scale; exact on washed inputs.
    pub fn normalize_coord(&self, p: [f64; 3]) -> [f64; 3] {
        let c = self.center();
        let s = pow2(-self.log2_scale);
        [(p[0] - c[0]) * s, (p[1] - c[1]) * s, (p[2] - c[2]) * s]
    }

    pub fn denormalize_coord(&self, q: [f64; 3]) -> [f64; 3] {
        let c = self.center();
        let s = pow2(self.log2_scale);
        [q[0] * s + c[0], q[1] * s + c[1], q[2] * s + c[2]]
    }

    pub fn normalize_radius(&self, r: f64) -> f64 {
        r * pow2(-self.radius_log2_scale)
    }

    pub fn denormalize_radius(&self, q: f64) -> f64 {
        q * pow2(self.radius_log2_scale)
    }
}
