//! Human-inspectable exports: ASCII PLY point clouds and binary PPM images.

use std::fs;
use std::path::Path;

use crate::dataio::DataIoError;
use crate::eval::PointCloud;
use crate::geometry::{Attribute, GeoMap};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataIoError + '_ {
    move |source| DataIoError::Io { path: path.display().to_string(), source }
}

/// ASCII PLY with per-vertex positions and normals, written at f32 precision
/// to match what viewers expect of `property float`.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), DataIoError> {
    assert_eq!(cloud.points.len(), cloud.normals.len(), "cloud points and normals must pair up");
    let mut text = String::new();
    text.push_str("ply\nformat ascii 1.0\n");
    text.push_str(&format!("element vertex {}\n", cloud.points.len()));
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        text.push_str(&format!("property float {name}\n"));
    }
    text.push_str("end_header\n");
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p[0] as f32, p[1] as f32, p[2] as f32, n[0] as f32, n[1] as f32, n[2] as f32
        ));
    }
    fs::write(path, text).map_err(io_err(path))
}

fn byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Valid-pixel value range of one channel; None when nothing is valid.
fn channel_range(map: &GeoMap, c: usize) -> Option<(f64, f64)> {
    let mut range: Option<(f64, f64)> = None;
    for v in 0..map.height {
        for u in 0..map.width {
            if !map.masked(v, u) {
                continue;
            }
            let x = map.at(v, u, c) as f64;
            range = Some(match range {
                None => (x, x),
                Some((lo, hi)) => (lo.min(x), hi.max(x)),
            });
        }
    }
    range
}

fn rescale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        // a constant channel renders mid-gray
        0.5
    }
}

/// Binary 8-bit PPM (P6). Rgb maps write their channels directly, normals
/// shift from [-1, 1] to [0, 1], everything else rescales each channel to its
/// own valid-pixel range. Masked-out pixels come out black.
pub fn write_ppm(path: &Path, map: &GeoMap) -> Result<(), DataIoError> {
    let mut bytes = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    let ranges: Vec<(f64, f64)> =
        (0..map.channels).map(|c| channel_range(map, c).unwrap_or((0.0, 1.0))).collect();
    for v in 0..map.height {
        for u in 0..map.width {
            if !map.masked(v, u) {
                bytes.extend_from_slice(&[0, 0, 0]);
                continue;
            }
            for c in 0..3 {
                let c = c.min(map.channels - 1);
                let x = map.at(v, u, c) as f64;
                let y = match map.attribute {
                    Attribute::Rgb => x,
                    Attribute::Normal => (x + 1.0) / 2.0,
                    _ => rescale(x, ranges[c].0, ranges[c].1),
                };
                bytes.push(byte(y));
            }
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}
