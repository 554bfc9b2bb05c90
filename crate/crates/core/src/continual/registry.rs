use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::MaskStrategy;
use crate::data::{make_calibration_prompts, special_token, ConceptSpec};
use crate::diffusion::{checkpoint_hash, load_checkpoint, save_checkpoint, Dtype, ModelWeights, NoiseSchedule};
use crate::error::{Error, Result};
use crate::select::{general_mask, load_mask_set, MaskSet, SelectionConfig};

pub const REGISTRY_FILE: &str = "registry.json";
pub const W0_DIR: &str = "w0";
pub const CURRENT_DIR: &str = "current";
pub const CONCEPTS_DIR: &str = "concepts";
const REGISTRY_VERSION: u32 = 1;
/// Highest number of concepts one registry can hold (one per special slot).
pub const MAX_CONCEPTS: usize = crate::data::vocab::SPECIAL_SLOTS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub base: usize,
    pub general: usize,
    pub concept: usize,
    pub reg: usize,
    /// Bits actually trained (differs from `concept` only for ablation strategies).
    pub trained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub concept_id: usize,
    pub special_token: usize,
    pub spec: ConceptSpec,
    pub strategy: MaskStrategy,
    /// Directory (relative to the registry root) holding the trained mask set and loss curve.
    pub masks_dir: String,
    pub masks_hash: String,
    pub counts: MaskCounts,
    pub steps: usize,
    pub seed: u64,
    pub loss_csv: String,
    /// Hash of the checkpoint written right after this concept was learned.
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegistryFile {
    version: u32,
    w0: CheckpointRef,
    current: CheckpointRef,
    selection: SelectionConfig,
    calibration_prompts: usize,
    calibration_seed: u64,
    records: Vec<ConceptRecord>,
}

/// Run directory holding `W_0`, the current `W_m`, one mask set per learned
/// concept and `registry.json`.
#[derive(Debug, Clone)]
pub struct ConceptRegistry {
    root: PathBuf,
    file: RegistryFile,
    general_cache: Option<MaskSet>,
}

impl ConceptRegistry {
    /// Starts a registry at `root` from the pretrained weights.
    pub fn create(
        root: &Path,
        w0: &ModelWeights,
        schedule: &NoiseSchedule,
        selection: SelectionConfig,
        calibration_prompts: usize,
        calibration_seed: u64,
    ) -> Result<Self> {
        if root.join(REGISTRY_FILE).exists() {
            return Err(Error::Usage(format!("{} already holds a registry", root.display())));
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let w0_hash = save_checkpoint(&root.join(W0_DIR), w0, schedule, Dtype::F64)?;
        let cur_hash = save_checkpoint(&root.join(CURRENT_DIR), w0, schedule, Dtype::F64)?;
        let reg = Self {
            root: root.to_path_buf(),
            file: RegistryFile {
                version: REGISTRY_VERSION,
                w0: CheckpointRef {
                    path: W0_DIR.into(),
                    hash: w0_hash,
                },
                current: CheckpointRef {
                    path: CURRENT_DIR.into(),
                    hash: cur_hash,
                },
                selection,
                calibration_prompts,
                calibration_seed,
                records: Vec::new(),
            },
            general_cache: None,
        };
        reg.save()?;
        Ok(reg)
    }

    /// Opens and verifies a registry: checkpoint hashes and every mask set.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(REGISTRY_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let file: RegistryFile = serde_json::from_slice(&bytes).map_err(|e| Error::integrity(&path, e.to_string()))?;
        if file.version != REGISTRY_VERSION {
            return Err(Error::integrity(&path, format!("unsupported registry version {}", file.version)));
        }
        for r in [&file.w0, &file.current] {
            if checkpoint_hash(&root.join(&r.path))? != r.hash {
                return Err(Error::integrity(root.join(&r.path), "checkpoint hash differs from registry"));
            }
        }
        for (k, rec) in file.records.iter().enumerate() {
            if rec.concept_id != k + 1 {
                return Err(Error::integrity(&path, "concept ids are not consecutive"));
            }
            let set = load_mask_set(&root.join(&rec.masks_dir))?;
            if set.content_hash() != rec.masks_hash {
                return Err(Error::integrity(root.join(&rec.masks_dir), "mask hash differs from registry"));
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            file,
            general_cache: None,
        })
    }

    /// Writes `registry.json` canonically (same state, same bytes).
    pub fn save(&self) -> Result<()> {
        let path = self.root.join(REGISTRY_FILE);
        let mut bytes = serde_json::to_vec_pretty(&self.file)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ConceptRecord] {
        &self.file.records
    }

    pub fn len(&self) -> usize {
        self.file.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.records.is_empty()
    }

    pub fn selection(&self) -> SelectionConfig {
        self.file.selection
    }

    pub fn w0_ref(&self) -> &CheckpointRef {
        &self.file.w0
    }

    pub fn current_ref(&self) -> &CheckpointRef {
        &self.file.current
    }

    pub fn w0_dir(&self) -> PathBuf {
        self.root.join(&self.file.w0.path)
    }

    pub fn current_dir(&self) -> PathBuf {
        self.root.join(&self.file.current.path)
    }

    pub fn load_w0(&self) -> Result<(ModelWeights, NoiseSchedule)> {
        load_checkpoint(&self.w0_dir())
    }

    pub fn load_current(&self) -> Result<(ModelWeights, NoiseSchedule)> {
        load_checkpoint(&self.current_dir())
    }

    pub fn record(&self, concept_id: usize) -> Result<&ConceptRecord> {
        self.file
            .records
            .iter()
            .find(|r| r.concept_id == concept_id)
            .ok_or_else(|| Error::Lookup(format!("no concept {concept_id} in registry")))
    }

    pub fn concept_masks(&self, concept_id: usize) -> Result<MaskSet> {
        let rec = self.record(concept_id)?;
        load_mask_set(&self.root.join(&rec.masks_dir))
    }

    /// Mask sets of all learned concepts, in order.
    pub fn all_masks(&self) -> Result<Vec<MaskSet>> {
        self.file.records.iter().map(|r| self.concept_masks(r.concept_id)).collect()
    }

    /// Next free special token.
    pub fn next_special_token(&self) -> Result<usize> {
        let k = self.file.records.len();
        if k >= MAX_CONCEPTS {
            return Err(Error::Capacity(format!("all {MAX_CONCEPTS} special-token slots are in use")));
        }
        special_token(k + 1).ok_or_else(|| Error::Capacity("no free special-token slot".into()))
    }

    /// General-neuron mask on `W_0`, computed once per opened registry.
    pub fn general_mask(&mut self, w0: &ModelWeights) -> Result<MaskSet> {
        if let Some(m) = &self.general_cache {
            return Ok(m.clone());
        }
        let prompts = make_calibration_prompts(self.file.calibration_prompts, self.file.calibration_seed)?;
        let m = general_mask(&prompts, w0, &self.file.selection)?;
        self.general_cache = Some(m.clone());
        Ok(m)
    }

    pub(crate) fn concept_dir_name(concept_id: usize) -> String {
        format!("{CONCEPTS_DIR}/concept_{concept_id:03}")
    }

    /// Appends a record and points `current` at the freshly written checkpoint.
    pub(crate) fn push_record(&mut self, record: ConceptRecord) -> Result<()> {
        let expected_id = self.file.records.len() + 1;
        if record.concept_id != expected_id {
            return Err(Error::Usage(format!("expected concept id {expected_id}, got {}", record.concept_id)));
        }
        if self.file.records.iter().any(|r| r.special_token == record.special_token) {
            return Err(Error::Usage(format!("special token {} already in use", record.special_token)));
        }
        self.file.current.hash = record.checkpoint_hash.clone();
        self.file.records.push(record);
        self.save()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ModelConfig;

    #[test]
    fn create_open_save_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("run");
        let w = ModelWeights::init(ModelConfig::default(), 1).unwrap();
        let s = NoiseSchedule::cosine(100);
        let reg = ConceptRegistry::create(&root, &w, &s, SelectionConfig::default(), 20, 0).unwrap();
        let first = fs::read(root.join(REGISTRY_FILE)).unwrap();
        let opened = ConceptRegistry::open(&root).unwrap();
        opened.save().unwrap();
        assert_eq!(fs::read(root.join(REGISTRY_FILE)).unwrap(), first);
        assert_eq!(reg.next_special_token().unwrap(), special_token(1).unwrap());
        assert!(matches!(reg.record(1), Err(Error::Lookup(_))));
        assert!(ConceptRegistry::create(&root, &w, &s, SelectionConfig::default(), 20, 0).is_err());
    }

    #[test]
    fn tampered_checkpoint_fails_open() {
        let dir = tempfile::tempdir().unwrap();
        let w = ModelWeights::init(ModelConfig::default(), 1).unwrap();
        let s = NoiseSchedule::cosine(100);
        ConceptRegistry::create(dir.path(), &w, &s, SelectionConfig::default(), 20, 0).unwrap();
        let other = ModelWeights::init(ModelConfig::default(), 2).unwrap();
        save_checkpoint(&dir.path().join(CURRENT_DIR), &other, &s, Dtype::F64).unwrap();
        assert!(matches!(ConceptRegistry::open(dir.path()), Err(Error::Integrity { .. })));
    }
}
