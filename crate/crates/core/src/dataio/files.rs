//! On-disk formats: the "UGEO" binary map container and the plain-text
//! camera file.
//!
//! UGEO layout, all integers little-endian:
//!   magic "UGEO" | u16 version | u8 attribute tag | u8 reserved |
//!   u32 height | u32 width | u32 channels |
//!   height*width*channels f32 values | height*width mask bytes (0/1)
//!
//! Camera files hold one line per frame: `fx fy cx cy` followed by the 16
//! world-to-camera matrix entries in row-major order, printed with Rust's
//! shortest round-trip f64 formatting so parsing restores bits exactly.

use std::fs;
use std::path::Path;

use nalgebra::Matrix4;

use super::DataIoError;
use crate::geometry::{Attribute, Extrinsics, GeoMap, Intrinsics};

pub const GEOMAP_MAGIC: [u8; 4] = *b"UGEO";
pub const GEOMAP_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 + 4 + 4;

pub fn write_geomap_bytes(map: &GeoMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + map.values.len() * 4 + map.mask.len());
    out.extend_from_slice(&GEOMAP_MAGIC);
    out.extend_from_slice(&GEOMAP_VERSION.to_le_bytes());
    out.push(map.attribute.tag());
    out.push(0);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.channels as u32).to_le_bytes());
    for v in &map.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&map.mask);
    out
}

pub fn read_geomap_bytes(bytes: &[u8]) -> Result<GeoMap, DataIoError> {
    if bytes.len() < HEADER_LEN {
        return Err(DataIoError::Truncated { what: "header", expected: HEADER_LEN, got: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != GEOMAP_MAGIC {
        return Err(DataIoError::BadMagic { expected: GEOMAP_MAGIC, found: magic });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != GEOMAP_VERSION {
        return Err(DataIoError::UnsupportedVersion { found: version, supported: GEOMAP_VERSION });
    }
    let tag = bytes[6];
    let attribute = Attribute::from_tag(tag).ok_or(DataIoError::UnknownAttributeTag(tag))?;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if height == 0 || width == 0 {
        return Err(DataIoError::BadMapHeader(format!("zero dimension {height}x{width}")));
    }
    if channels != attribute.channels() {
        return Err(DataIoError::ChannelMismatch {
            attribute,
            expected: attribute.channels(),
            got: channels,
        });
    }
    let pixels = height
        .checked_mul(width)
        .filter(|&p| p <= (1 << 28))
        .ok_or_else(|| DataIoError::BadMapHeader(format!("implausible size {height}x{width}")))?;
    let value_count = pixels * channels;
    let need = HEADER_LEN + value_count * 4 + pixels;
    if bytes.len() < need {
        return Err(DataIoError::Truncated { what: "payload", expected: need, got: bytes.len() });
    }
    let mut values = Vec::with_capacity(value_count);
    let mut off = HEADER_LEN;
    for _ in 0..value_count {
        values.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    let mask = bytes[off..off + pixels].to_vec();
    for (i, &b) in mask.iter().enumerate() {
        if b > 1 {
            return Err(DataIoError::BadMaskByte { index: i, value: b });
        }
    }
    Ok(GeoMap { attribute, height, width, channels, values, mask })
}

pub fn write_geomap(path: &Path, map: &GeoMap) -> Result<(), DataIoError> {
    fs::write(path, write_geomap_bytes(map))
        .map_err(|source| DataIoError::Io { path: path.display().to_string(), source })
}

pub fn read_geomap(path: &Path) -> Result<GeoMap, DataIoError> {
    let bytes = fs::read(path)
        .map_err(|source| DataIoError::Io { path: path.display().to_string(), source })?;
    read_geomap_bytes(&bytes)
}

pub fn write_cameras(
    path: &Path,
    cameras: &[(Intrinsics, Extrinsics)],
) -> Result<(), DataIoError> {
    let mut text = String::new();
    for (k, e) in cameras {
        text.push_str(&format!("{} {} {} {}", k.fx, k.fy, k.cx, k.cy));
        let m = e.matrix();
        for r in 0..4 {
            for c in 0..4 {
                text.push_str(&format!(" {}", m[(r, c)]));
            }
        }
        text.push('\n');
    }
    fs::write(path, text)
        .map_err(|source| DataIoError::Io { path: path.display().to_string(), source })
}

pub fn read_cameras(path: &Path) -> Result<Vec<(Intrinsics, Extrinsics)>, DataIoError> {
    let text = fs::read_to_string(path)
        .map_err(|source| DataIoError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 20 {
            return Err(DataIoError::BadCameraLine {
                line: idx + 1,
                reason: format!("expected 20 fields, found {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 20];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|e| DataIoError::BadCameraLine {
                line: idx + 1,
                reason: format!("bad number {field:?}: {e}"),
            })?;
        }
        let k = Intrinsics { fx: nums[0], fy: nums[1], cx: nums[2], cy: nums[3] };
        let m = Matrix4::from_fn(|r, c| nums[4 + r * 4 + c]);
        let e = Extrinsics::from_matrix(m).map_err(|e| DataIoError::BadCameraLine {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push((k, e));
    }
    Ok(out)
}
