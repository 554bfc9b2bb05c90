//! Checkpoint directories: `manifest.json` plus `weights.bin`.
//!
//! `weights.bin` holds every tensor as little-endian IEEE-754 values,
//! concatenated in manifest order. The manifest records the model config,
//! the noise schedule, a `(name, shape, offset, nbytes)` table and the
//! SHA-256 of `weights.bin`. Loaders verify the hash, the table and the
//! file length before building anything.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::schedule::NoiseSchedule;
use super::weights::{parameter_layout, ModelWeights};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT: &str = "cns-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub dtype: Dtype,
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    pub tensors: Vec<TensorEntry>,
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes an arbitrary named tensor list; returns the content hash.
pub fn save_tensors(
    dir: &Path,
    config: &ModelConfig,
    schedule: &NoiseSchedule,
    tensors: &[(&str, &Tensor)],
    dtype: Dtype,
) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut table = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = blob.len();
        match dtype {
            Dtype::F64 => blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes())),
            Dtype::F32 => blob.extend(t.data().iter().flat_map(|&v| (v as f32).to_le_bytes())),
        }
        table.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            nbytes: blob.len() - offset,
        });
    }
    let hash = sha256_hex(&blob);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype,
        config: *config,
        schedule: schedule.clone(),
        tensors: table,
        content_hash: hash.clone(),
        note: (dtype == Dtype::F32).then(|| "values downcast from f64 to f32 on save".to_string()),
    };
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, &blob).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(hash)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let mpath = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::integrity(&mpath, e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::integrity(
            &mpath,
            format!("unsupported format {} v{}", manifest.format, manifest.version),
        ));
    }
    Ok(manifest)
}

/// Loads and verifies every tensor of a checkpoint directory.
pub fn load_tensors(dir: &Path) -> Result<(CheckpointManifest, Vec<(String, Tensor)>)> {
    let manifest = read_manifest(dir)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if sha256_hex(&blob) != manifest.content_hash {
        return Err(Error::integrity(&wpath, "content hash mismatch"));
    }
    let width = manifest.dtype.width();
    let mut expected_offset = 0;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let count: usize = entry.shape.iter().product();
        if entry.offset != expected_offset || entry.nbytes != count * width {
            return Err(Error::integrity(&wpath, format!("bad table entry for {}", entry.name)));
        }
        let bytes = blob
            .get(entry.offset..entry.offset + entry.nbytes)
            .ok_or_else(|| Error::integrity(&wpath, format!("{} runs past end of file", entry.name)))?;
        let data: Vec<f64> = match manifest.dtype {
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect(),
        };
        out.push((entry.name.clone(), Tensor::new(&entry.shape, data)?));
        expected_offset += entry.nbytes;
    }
    if expected_offset != blob.len() {
        return Err(Error::integrity(&wpath, "trailing bytes after last tensor"));
    }
    Ok((manifest, out))
}

pub fn save_checkpoint(dir: &Path, weights: &ModelWeights, schedule: &NoiseSchedule, dtype: Dtype) -> Result<String> {
    let tensors: Vec<(&str, &Tensor)> = weights.params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    save_tensors(dir, &weights.config, schedule, &tensors, dtype)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelWeights, NoiseSchedule)> {
    let (manifest, tensors) = load_tensors(dir)?;
    let layout = parameter_layout(&manifest.config);
    let matches = layout.len() == tensors.len()
        && layout
            .iter()
            .zip(&tensors)
            .all(|((n, s), (gn, t))| n == gn && s.as_slice() == t.shape());
    if !matches {
        return Err(Error::integrity(dir, "tensor table does not match the model config"));
    }
    let weights = ModelWeights::from_tensors(manifest.config, tensors)?;
    Ok((weights, manifest.schedule))
}

/// Content hash recorded in a checkpoint's manifest.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    Ok(read_manifest(dir)?.content_hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let w = ModelWeights::init(ModelConfig::default(), 9).unwrap();
        let s = NoiseSchedule::cosine(100);
        let h = save_checkpoint(dir.path(), &w, &s, Dtype::F64).unwrap();
        let (back, sched) = load_checkpoint(dir.path()).unwrap();
        assert!(back.bit_equal(&w));
        assert_eq!(sched, s);
        assert_eq!(checkpoint_hash(dir.path()).unwrap(), h);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let w = ModelWeights::init(ModelConfig::default(), 9).unwrap();
        save_checkpoint(dir.path(), &w, &NoiseSchedule::cosine(100), Dtype::F64).unwrap();
        let wpath = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&wpath).unwrap();
        bytes[100] ^= 1;
        fs::write(&wpath, &bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn f32_downcast_is_noted() {
        let dir = tempfile::tempdir().unwrap();
        let w = ModelWeights::init(ModelConfig::default(), 9).unwrap();
        save_checkpoint(dir.path(), &w, &NoiseSchedule::cosine(100), Dtype::F32).unwrap();
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.dtype, Dtype::F32);
        assert!(m.note.is_some());
        let (back, _) = load_checkpoint(dir.path()).unwrap();
        let a = w.params[3].value.data()[7];
        let b = back.params[3].value.data()[7];
        assert_eq!(b, f64::from(a as f32));
    }
}
