//! Checkpoint container: config, progress counters, and named tensors.
//!
//! Layout, integers little-endian:
//!   magic "UGCK" | u16 version | u32 meta_len | meta TOML |
//!   u32 tensor_count | per tensor:
//!     u32 name_len | utf-8 name | u32 ndim | ndim x u32 dims | f32 values
//!
//! Values are stored as f32. Saving first rounds the live f64 tensors to f32
//! in place, so the process that wrote a checkpoint keeps computing on
//! exactly the stored values and a resumed run reproduces it bitwise.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dit::params_schema;
use super::{Model, ModelConfig, ModelError, Params};
use crate::dataio::DataIoError;
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub trained_steps: u64,
    pub train_seed: u64,
}

/// Rounds a tensor to f32 precision in place.
pub fn wash_tensor_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

/// Writes the model parameters plus any extra named tensors (optimizer
/// moments, usually). The live tensors are f32-washed in place first; see the
/// module docs. The file is written atomically via a sibling temp file.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &mut Model,
    extras: &mut [(String, Tensor)],
    trained_steps: u64,
    train_seed: u64,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    for (_, t) in model.params.iter_mut() {
        wash_tensor_f32(t);
    }
    for (_, t) in extras.iter_mut() {
        wash_tensor_f32(t);
    }
    let meta = CheckpointMeta { config: model.config, trained_steps, train_seed };
    let tensors = model.params.iter().chain(extras.iter().map(|(n, t)| (n.as_str(), t)));
    let bytes = checkpoint_bytes(&meta, tensors)?;
    let tmp = path.with_extension("tmp");
    let io = |source| DataIoError::Io { path: path.display().to_string(), source };
    fs::write(&tmp, &bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

fn checkpoint_bytes<'a>(
    meta: &CheckpointMeta,
    tensors: impl Iterator<Item = (&'a str, &'a Tensor)>,
) -> Result<Vec<u8>, ModelError> {
    let meta_text = toml::to_string(meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_text.as_bytes());
    let count_at = out.len();
    out.extend_from_slice(&0u32.to_le_bytes());
    let mut count = 0u32;
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        count += 1;
    }
    out[count_at..count_at + 4].copy_from_slice(&count.to_le_bytes());
    Ok(out)
}

/// Reads every tensor in file order along with the meta block.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(CheckpointMeta, Vec<(String, Tensor)>), ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|source| DataIoError::Io { path: path.display().to_string(), source })?;
    parse_checkpoint(&bytes)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, Vec<(String, Tensor)>), ModelError> {
    let mut r = Reader { bytes, off: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(DataIoError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic }.into());
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(
            DataIoError::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION }.into()
        );
    }
    let meta_len = r.u32("meta length")? as usize;
    if meta_len > 1 << 20 {
        return Err(ModelError::Checkpoint(format!("implausible meta length {meta_len}")));
    }
    let meta_text = std::str::from_utf8(r.take(meta_len, "meta")?)
        .map_err(|e| ModelError::Checkpoint(format!("meta is not utf-8: {e}")))?;
    let meta: CheckpointMeta =
        toml::from_str(meta_text).map_err(|e| ModelError::Checkpoint(format!("meta: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    if count > 1 << 20 {
        return Err(ModelError::Checkpoint(format!("implausible tensor count {count}")));
    }
    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len == 0 || name_len > 4096 {
            return Err(ModelError::Checkpoint(format!("implausible name length {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|e| ModelError::Checkpoint(format!("tensor name is not utf-8: {e}")))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {name}")));
        }
        let ndim = r.u32("rank")? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(ModelError::Checkpoint(format!("tensor {name}: implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| if d == 0 { None } else { acc.checked_mul(d) })
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| {
                ModelError::Checkpoint(format!("tensor {name}: implausible shape {shape:?}"))
            })?;
        let raw = r.take(numel * 4, "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push((name, Tensor::from_vec(shape, data)));
    }
    if r.off != bytes.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.off
        )));
    }
    Ok((meta, tensors))
}

/// Rebuilds the model from a checkpoint. Tensors outside the parameter
/// schema (optimizer moments) come back separately, in file order.
pub fn model_from_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(Model, CheckpointMeta, Vec<(String, Tensor)>), ModelError> {
    let (meta, tensors) = load_checkpoint(path)?;
    let schema = params_schema(&meta.config);
    let schema_names: HashSet<&str> = schema.iter().map(|s| s.name.as_str()).collect();
    let mut by_name: HashMap<String, Tensor> = HashMap::new();
    let mut extras = Vec::new();
    for (name, tensor) in tensors {
        if schema_names.contains(name.as_str()) {
            by_name.insert(name, tensor);
        } else {
            extras.push((name, tensor));
        }
    }
    let mut params = Params::new();
    for spec in &schema {
        let tensor = by_name.remove(&spec.name).ok_or_else(|| {
            ModelError::Checkpoint(format!("checkpoint lacks parameter {}", spec.name))
        })?;
        params.insert(spec.name.clone(), tensor);
    }
    let model = Model::from_parts(meta.config, params)?;
    Ok((model, meta, extras))
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&[u8], DataIoError> {
        if self.bytes.len() - self.off < n {
            return Err(DataIoError::Truncated {
                what,
                expected: self.off + n,
                got: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, DataIoError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Conditioning;
    use tempfile::tempdir;

    fn model_and_extras() -> (Model, Vec<(String, Tensor)>) {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            dim: 16,
            patch: 2,
            mlp_ratio: 2,
            mode: Conditioning::SeqConcat,
            rope_base: 50.0,
            rope_split: [4, 2, 2],
        };
        let mut model = Model::init(cfg, 17).unwrap();
        // Give every tensor values that are not f32-exact so washing matters.
        for (ti, (_, tensor)) in model.params.iter_mut().enumerate() {
            for (j, v) in tensor.data_mut().iter_mut().enumerate() {
                *v += 0.1 + (ti * 13 + j) as f64 * 1e-3 + 1e-13;
            }
        }
        let extras: Vec<(String, Tensor)> = model
            .params
            .iter()
            .flat_map(|(name, tensor)| {
                let m = Tensor::filled(tensor.shape().to_vec(), 0.1 + 1e-12);
                let v = Tensor::filled(tensor.shape().to_vec(), 0.3 + 1e-12);
                [(format!("adam_m.{name}"), m), (format!("adam_v.{name}"), v)]
            })
            .collect();
        (model, extras)
    }

    #[test]
    fn save_washes_in_place_and_loads_back_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ugck");
        let (mut model, mut extras) = model_and_extras();
        save_checkpoint(&path, &mut model, &mut extras, 123, 99).unwrap();
        // In-memory values are now exactly representable in f32.
        for (_, t) in model.params.iter() {
            assert!(t.data().iter().all(|&v| v == v as f32 as f64));
        }
        let (loaded, meta, back_extras) = model_from_checkpoint(&path).unwrap();
        assert_eq!(meta.config, model.config);
        assert_eq!(meta.trained_steps, 123);
        assert_eq!(meta.train_seed, 99);
        for ((na, ta), (nb, tb)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
        assert_eq!(back_extras.len(), extras.len());
        for ((na, ta), (nb, tb)) in extras.iter().zip(&back_extras) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
    }

    #[test]
    fn resaving_a_loaded_checkpoint_reproduces_the_bytes() {
        let dir = tempdir().unwrap();
        let first = dir.path().join("a.ugck");
        let second = dir.path().join("b.ugck");
        let (mut model, mut extras) = model_and_extras();
        save_checkpoint(&first, &mut model, &mut extras, 7, 5).unwrap();
        let (mut loaded, meta, mut loaded_extras) = model_from_checkpoint(&first).unwrap();
        save_checkpoint(&second, &mut loaded, &mut loaded_extras, meta.trained_steps, meta.train_seed)
            .unwrap();
        assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn header_corruption_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ugck");
        let (mut model, mut extras) = model_and_extras();
        save_checkpoint(&path, &mut model, &mut extras, 1, 1).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            parse_checkpoint(&bad),
            Err(ModelError::Data(DataIoError::BadMagic { .. }))
        ));

        let mut bad = good.clone();
        bad[4] = 0xFF;
        assert!(matches!(
            parse_checkpoint(&bad),
            Err(ModelError::Data(DataIoError::UnsupportedVersion { .. }))
        ));

        assert!(matches!(
            parse_checkpoint(&good[..good.len() - 3]),
            Err(ModelError::Data(DataIoError::Truncated { .. }))
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(parse_checkpoint(&bad), Err(ModelError::Checkpoint(_))));
    }

    #[test]
    fn missing_parameters_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.ugck");
        let (model, _) = model_and_extras();
        let meta = CheckpointMeta { config: model.config, trained_steps: 0, train_seed: 0 };
        // Write all but the first parameter.
        let bytes = checkpoint_bytes(&meta, model.params.iter().skip(1)).unwrap();
        fs::write(&path, bytes).unwrap();
        let err = model_from_checkpoint(&path).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(ref m) if m.contains("lacks parameter")));
    }
}
