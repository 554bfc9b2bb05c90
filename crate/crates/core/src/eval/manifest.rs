use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continual::{train_concept, ConceptRegistry, TrainConfig};
use crate::data::{novel_specs, ConceptSpec};
use crate::diffusion::{ModelWeights, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::derive_seed;
use crate::select::SelectionConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REGISTRY_SUBDIR: &str = "registry";
pub const STAGES_SUBDIR: &str = "stages";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples per fidelity estimate.
    pub n_samples: usize,
    /// Sampling seeds; each contributes one per-seed value.
    pub seeds: Vec<u64>,
    /// Held-in prompts for the attribute-agreement proxy.
    pub alignment_prompts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            seeds: vec![0, 1, 2],
            alignment_prompts: 64,
        }
    }
}

/// Ordered list of concepts to learn plus every setting needed to replay the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub name: String,
    /// Concept specs as `texture:color:shape:background`.
    pub concepts: Vec<String>,
    pub seed: u64,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub calibration_prompts: usize,
    pub eval: EvalConfig,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            name: "continual".into(),
            concepts: default_concepts(5).iter().map(ConceptSpec::label).collect(),
            seed: 0,
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            calibration_prompts: 20,
            eval: EvalConfig::default(),
        }
    }
}

/// `n` novel concepts, cycling through shapes so neighbors differ in shape.
pub fn default_concepts(n: usize) -> Vec<ConceptSpec> {
    let novel = novel_specs();
    let mut out: Vec<ConceptSpec> = Vec::with_capacity(n);
    let mut k = 0;
    while out.len() < n && k < novel.len() * 8 {
        let cand = novel[(k * 37) % novel.len()];
        k += 1;
        let fresh = out.iter().all(|s| {
            (s.shape, s.fill_color, s.texture) != (cand.shape, cand.fill_color, cand.texture)
        });
        let shape_turn = out.last().is_none_or(|s| s.shape != cand.shape);
        if fresh && shape_turn {
            out.push(cand);
        }
    }
    out
}

impl RunManifest {
    pub fn specs(&self) -> Result<Vec<ConceptSpec>> {
        self.concepts.iter().map(|c| ConceptSpec::parse(c)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let specs = self.specs()?;
        if specs.is_empty() {
            return Err(Error::Manifest("manifest lists no concepts".into()));
        }
        if let Some(s) = specs.iter().find(|s| !s.is_novel) {
            return Err(Error::Contamination(format!("{} is held-in", s.label())));
        }
        if self.eval.seeds.is_empty() || self.eval.n_samples == 0 {
            return Err(Error::Manifest("evaluation needs seeds and samples".into()));
        }
        Ok(())
    }

    /// Training seed of concept `m` (1-based).
    pub fn concept_seed(&self, m: usize) -> u64 {
        derive_seed(self.seed, &[0xC0C0, m as u64])
    }

    pub fn calibration_seed(&self) -> u64 {
        derive_seed(self.seed, &[0xCA1B])
    }

    /// Copy with the regularizer switched off and a marked name.
    pub fn without_reg(&self) -> Self {
        Self {
            name: format!("{}-no-reg", self.name),
            train: self.train.without_reg(),
            ..self.clone()
        }
    }
}

/// Output directory of one manifest run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn registry_dir(&self) -> PathBuf {
        self.root.join(REGISTRY_SUBDIR)
    }

    /// Checkpoint retained right after concept `stage` was learned.
    pub fn stage_dir(&self, stage: usize) -> PathBuf {
        self.root.join(STAGES_SUBDIR).join(format!("stage_{stage:02}"))
    }

    pub fn load_manifest(&self) -> Result<RunManifest> {
        let path = self.manifest_path();
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::integrity(&path, e.to_string()))
    }

    pub fn open_registry(&self) -> Result<ConceptRegistry> {
        ConceptRegistry::open(&self.registry_dir())
    }
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    let mut entries: Vec<_> = fs::read_dir(from)
        .map_err(|e| Error::io(from, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(from, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let dst = to.join(e.file_name());
        fs::copy(e.path(), &dst).map_err(|err| Error::io(&dst, err))?;
    }
    Ok(())
}

/// Learns every manifest concept in order from `w0`, keeping a checkpoint
/// copy per stage outside the registry.
pub fn run_manifest(manifest: &RunManifest, w0: &ModelWeights, schedule: &NoiseSchedule, out: &Path) -> Result<RunLayout> {
    manifest.validate()?;
    let layout = RunLayout::new(out);
    if layout.manifest_path().exists() {
        return Err(Error::Usage(format!("{} already holds a run", out.display())));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    fs::write(layout.manifest_path(), bytes).map_err(|e| Error::io(layout.manifest_path(), e))?;
    let mut registry = ConceptRegistry::create(
        &layout.registry_dir(),
        w0,
        schedule,
        manifest.selection,
        manifest.calibration_prompts,
        manifest.calibration_seed(),
    )?;
    for (k, spec) in manifest.specs()?.iter().enumerate() {
        let m = k + 1;
        train_concept(&mut registry, spec, &manifest.train, manifest.concept_seed(m))?;
        copy_dir(&registry.current_dir(), &layout.stage_dir(m))?;
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_concepts_are_novel_distinct_and_alternate_shapes() {
        let c = default_concepts(7);
        assert_eq!(c.len(), 7);
        for w in c.windows(2) {
            assert_ne!(w[0].shape, w[1].shape);
        }
        assert!(c.iter().all(|s| s.is_novel));
        let m = RunManifest::default();
        m.validate().unwrap();
        assert_eq!(m.specs().unwrap(), default_concepts(5));
    }

    #[test]
    fn manifest_toml_round_trip_and_unknown_keys() {
        let m = RunManifest::default();
        let text = toml::to_string(&m).unwrap();
        assert_eq!(toml::from_str::<RunManifest>(&text).unwrap(), m);
        let partial: RunManifest = toml::from_str("seed = 4\n[train]\nsteps = 7\n").unwrap();
        assert_eq!((partial.seed, partial.train.steps, partial.train.lr_text), (4, 7, 5e-3));
        assert!(toml::from_str::<RunManifest>("bogus = 1\n").is_err());
        let held = RunManifest {
            concepts: vec![crate::data::held_in_specs()[0].label()],
            ..Default::default()
        };
        assert!(matches!(held.validate(), Err(Error::Contamination(_))));
    }
}
