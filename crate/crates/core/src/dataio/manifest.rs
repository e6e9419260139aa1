//! Dataset manifest (TOML) plus the streaming loader and writer.
//!
//! A dataset directory holds one `manifest.toml` and one subdirectory per
//! sequence with its map files and camera file. The manifest lists every
//! sequence with per-attribute file paths (relative to the manifest
//! directory) and the integer normalization record, and names which
//! sequences belong to each attribute's training split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::files::{read_cameras, read_geomap, write_cameras, write_geomap};
use super::record::NormalizationRecord;
use super::{DataIoError, SequenceSample};
use crate::geometry::Attribute;

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

/// Field order matters for TOML output: plain values first, tables after.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Camera file path relative to the manifest directory.
    pub cameras: String,
    pub normalization: NormalizationRecord,
    /// Attribute name to per-frame map paths, relative to the manifest dir.
    pub files: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    /// Attribute name to the sequence ids trainable for that attribute.
    #[serde(default)]
    pub datasets: BTreeMap<String, Vec<String>>,
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> Result<String, DataIoError> {
        toml::to_string_pretty(self).map_err(|e| DataIoError::Manifest(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, DataIoError> {
        let m: Self = toml::from_str(text).map_err(|e| DataIoError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DataIoError::Manifest(format!(
                "manifest version {} unsupported, this build reads {MANIFEST_VERSION}",
                m.version
            )));
        }
        Ok(m)
    }
}

/// Read access to a dataset; sequences load one at a time.
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    index: BTreeMap<String, usize>,
}

impl Dataset {
    /// `path` may be the manifest file or the directory containing it.
    pub fn open(path: &Path) -> Result<Self, DataIoError> {
        let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let text = fs::read_to_string(&manifest_path)
            .map_err(|source| DataIoError::Io { path: manifest_path.display().to_string(), source })?;
        let manifest = DatasetManifest::from_toml(&text)?;
        if manifest.sequences.is_empty() {
            return Err(DataIoError::EmptyDataset);
        }
        let mut index = BTreeMap::new();
        for (i, entry) in manifest.sequences.iter().enumerate() {
            if index.insert(entry.id.clone(), i).is_some() {
                return Err(DataIoError::Manifest(format!("duplicate sequence id {}", entry.id)));
            }
        }
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self { root, manifest, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.sequences.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.manifest.sequences.iter().map(|e| e.id.as_str())
    }

    pub fn entry(&self, id: &str) -> Result<&SequenceEntry, DataIoError> {
        self.index
            .get(id)
            .map(|&i| &self.manifest.sequences[i])
            .ok_or_else(|| DataIoError::UnknownSequence(id.to_string()))
    }

    /// Sequence ids in the training split for `attribute`; empty if the
    /// manifest defines no split for it.
    pub fn split(&self, attribute: Attribute) -> &[String] {
        self.manifest
            .datasets
            .get(attribute.name())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn load(&self, id: &str) -> Result<SequenceSample, DataIoError> {
        let entry = self.entry(id)?;
        load_sequence(&self.root, entry)
    }

    /// Lazily loads sequences in manifest order.
    pub fn stream(&self) -> impl Iterator<Item = Result<SequenceSample, DataIoError>> + '_ {
        self.manifest.sequences.iter().map(move |e| load_sequence(&self.root, e))
    }
}

fn load_sequence(root: &Path, entry: &SequenceEntry) -> Result<SequenceSample, DataIoError> {
    let fail = |reason: String| DataIoError::BadSequence { id: entry.id.clone(), reason };
    entry.normalization.validate()?;
    let cameras = read_cameras(&root.join(&entry.cameras))?;
    if cameras.len() != entry.frames {
        return Err(fail(format!(
            "camera file has {} frames, manifest says {}",
            cameras.len(),
            entry.frames
        )));
    }
    let mut maps = BTreeMap::new();
    for (name, paths) in &entry.files {
        let attribute = Attribute::from_name(name)
            .ok_or_else(|| fail(format!("unknown attribute {name:?}")))?;
        if paths.len() != entry.frames {
            return Err(fail(format!(
                "{name} lists {} files, manifest says {} frames",
                paths.len(),
                entry.frames
            )));
        }
        let mut stack = Vec::with_capacity(paths.len());
        for p in paths {
            let map = read_geomap(&root.join(p))?;
            if map.attribute != attribute {
                return Err(fail(format!(
                    "{p} holds {:?}, manifest slot is {name}",
                    map.attribute
                )));
            }
            stack.push(map);
        }
        maps.insert(attribute, stack);
    }
    let sample = SequenceSample {
        id: entry.id.clone(),
        height: entry.height,
        width: entry.width,
        intrinsics: cameras.iter().map(|(k, _)| *k).collect(),
        extrinsics: cameras.iter().map(|(_, e)| *e).collect(),
        maps,
        normalization: entry.normalization,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes sequences as they arrive and emits the manifest at the end, so a
/// full corpus never has to sit in memory.
pub struct DatasetWriter {
    root: PathBuf,
    entries: Vec<SequenceEntry>,
    ids: BTreeSet<String>,
}

impl DatasetWriter {
    pub fn create(root: &Path) -> Result<Self, DataIoError> {
        fs::create_dir_all(root)
            .map_err(|source| DataIoError::Io { path: root.display().to_string(), source })?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new(), ids: BTreeSet::new() })
    }

    pub fn add(&mut self, sample: &SequenceSample) -> Result<(), DataIoError> {
        sample.validate()?;
        if !self.ids.insert(sample.id.clone()) {
            return Err(DataIoError::Manifest(format!("duplicate sequence id {}", sample.id)));
        }
        let dir = self.root.join(&sample.id);
        fs::create_dir_all(&dir)
            .map_err(|source| DataIoError::Io { path: dir.display().to_string(), source })?;
        let cameras_rel = format!("{}/cameras.txt", sample.id);
        let cams: Vec<_> = sample
            .intrinsics
            .iter()
            .copied()
            .zip(sample.extrinsics.iter().copied())
            .collect();
        write_cameras(&self.root.join(&cameras_rel), &cams)?;
        let mut files = BTreeMap::new();
        for (attribute, stack) in &sample.maps {
            let mut paths = Vec::with_capacity(stack.len());
            for (f, map) in stack.iter().enumerate() {
                let rel = format!("{}/{}_{f:03}.ugeo", sample.id, attribute.name());
                write_geomap(&self.root.join(&rel), map)?;
                paths.push(rel);
            }
            files.insert(attribute.name().to_string(), paths);
        }
        self.entries.push(SequenceEntry {
            id: sample.id.clone(),
            frames: sample.frames(),
            height: sample.height,
            width: sample.width,
            cameras: cameras_rel,
            normalization: sample.normalization,
            files,
        });
        Ok(())
    }

    /// Writes the manifest with explicit training splits and returns its path.
    pub fn finish(self, datasets: BTreeMap<String, Vec<String>>) -> Result<PathBuf, DataIoError> {
        let manifest =
            DatasetManifest { version: MANIFEST_VERSION, datasets, sequences: self.entries };
        let path = self.root.join(MANIFEST_NAME);
        fs::write(&path, manifest.to_toml()?)
            .map_err(|source| DataIoError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }

    /// Convenience split: every geometry attribute maps to every sequence
    /// that carries it.
    pub fn finish_default_splits(self) -> Result<PathBuf, DataIoError> {
        let mut datasets: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for entry in &self.entries {
            for name in entry.files.keys() {
                let attr = Attribute::from_name(name);
                if matches!(attr, Some(Attribute::Coord | Attribute::Normal | Attribute::Radius)) {
                    datasets.entry(name.clone()).or_default().push(entry.id.clone());
                }
            }
        }
        self.finish(datasets)
    }
}
