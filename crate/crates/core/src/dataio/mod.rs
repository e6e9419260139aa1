//! Dataset containers and serialization: sequence samples, value
//! normalization, the binary map format, camera text files, manifests, and
//! the multi-view overlap/grouping machinery.

mod files;
mod grouping;
mod manifest;
mod overlap;
mod record;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{Attribute, Extrinsics, GeoMap, GeometryError, Intrinsics};

pub use files::{
    read_cameras, read_geomap, read_geomap_bytes, write_cameras, write_geomap, write_geomap_bytes,
};
pub use grouping::{
    fit_record, group_views, localize_sample, regroup_dataset, regroup_sequence, wash_coord_map,
    wash_radius_map,
};
pub use manifest::{Dataset, DatasetManifest, DatasetWriter, SequenceEntry, MANIFEST_NAME};
pub use overlap::{overlap_matrix, overlap_ratio, FrameView, OverlapMatrix, OCCLUSION_REL_TOL, OVERLAP_SUBSAMPLE};
pub use record::{NormalizationRecord, COORD_GRID_BITS};

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found}, this build reads {supported}")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("file truncated: wanted {expected} bytes for {what}, had {got}")]
    Truncated { what: &'static str, expected: usize, got: usize },
    #[error("unknown attribute tag {0}")]
    UnknownAttributeTag(u8),
    #[error("map header: {0}")]
    BadMapHeader(String),
    #[error("mask byte at pixel {index} is {value}, must be 0 or 1")]
    BadMaskByte { index: usize, value: u8 },
    #[error("channel count {got} does not match attribute {attribute:?} ({expected})")]
    ChannelMismatch { attribute: Attribute, expected: usize, got: usize },
    #[error("camera file line {line}: {reason}")]
    BadCameraLine { line: usize, reason: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("normalization: {0}")]
    Normalization(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown sequence id {0}")]
    UnknownSequence(String),
    #[error("sequence {id}: {reason}")]
    BadSequence { id: String, reason: String },
    #[error("grouping needs at least {need} frames, have {have}")]
    InsufficientFrames { need: usize, have: usize },
    #[error("num_view must be at least 2, got {0}")]
    BadNumView(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One multi-frame training/eval sample: RGB plus geometry maps for every
/// frame, cameras, and the per-sequence value normalization.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub intrinsics: Vec<Intrinsics>,
    /// World-to-camera per frame; frame 0 defines the global frame.
    pub extrinsics: Vec<Extrinsics>,
    /// Frame-major map stacks per attribute.
    pub maps: BTreeMap<Attribute, Vec<GeoMap>>,
    pub normalization: NormalizationRecord,
}


impl SequenceSample {
    pub fn frames(&self) -> usize {
        self.extrinsics.len()
    }

    pub fn attr(&self, a: Attribute) -> Option<&[GeoMap]> {
        self.maps.get(&a).map(|v| v.as_slice())
    }

    /// Cross-checks counts, shapes, camera validity, and every map's own
    /// invariants.
    pub fn validate(&self) -> Result<(), DataIoError> {
        let f = self.frames();
        let fail = |reason: String| DataIoError::BadSequence { id: self.id.clone(), reason };
        if f == 0 {
            return Err(fail("no frames".into()));
        }
        if self.intrinsics.len() != f {
            return Err(fail(format!("{} intrinsics for {f} frames", self.intrinsics.len())));
        }
        for (i, k) in self.intrinsics.iter().enumerate() {
            k.validate(self.width, self.height)
                .map_err(|e| fail(format!("frame {i}: {e}")))?;
        }
        for (attr, stack) in &self.maps {
            if stack.len() != f {
                return Err(fail(format!("{:?} stack has {} frames of {f}", attr, stack.len())));
            }
            for (i, m) in stack.iter().enumerate() {
                if m.height != self.height || m.width != self.width {
                    return Err(fail(format!(
                        "{:?} frame {i} is {}x{}, sequence is {}x{}",
                        attr, m.height, m.width, self.height, self.width
                    )));
                }
                m.validate().map_err(|e| fail(format!("{:?} frame {i}: {e}", attr)))?;
            }
        }
        Ok(())
    }
}
