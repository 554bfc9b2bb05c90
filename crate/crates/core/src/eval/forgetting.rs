use serde::{Deserialize, Serialize};

use super::fidelity::record_fidelity;
use super::manifest::RunLayout;
use crate::continual::ConceptRegistry;
use crate::diffusion::{checkpoint_hash, load_checkpoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingPoint {
    pub stage: usize,
    pub mean: f64,
    pub per_seed: Vec<f64>,
    pub checkpoint_hash: String,
}

/// Fidelity of one concept at each stage from the one that learned it onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingCurve {
    pub concept_id: usize,
    pub seeds: Vec<u64>,
    pub n_samples: usize,
    pub points: Vec<ForgettingPoint>,
}

impl ForgettingCurve {
    pub fn final_mean(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.mean)
    }

    /// `stage,mean,seed_<s>,...`.
    pub fn csv(&self) -> String {
        let mut out = String::from("stage,mean");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{:.6}", p.stage, p.mean));
            for v in &p.per_seed {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates concept `concept_id` on every retained stage checkpoint `≥ concept_id`.
pub fn forgetting_curve(
    layout: &RunLayout,
    registry: &ConceptRegistry,
    concept_id: usize,
    seeds: &[u64],
    n_samples: usize,
) -> Result<ForgettingCurve> {
    let record = registry.record(concept_id)?;
    if seeds.is_empty() {
        return Err(Error::Usage("forgetting curve needs at least one seed".into()));
    }
    let mut points = Vec::new();
    for stage in concept_id..=registry.len() {
        let dir = layout.stage_dir(stage);
        if !dir.exists() {
            return Err(Error::Manifest(format!("stage {stage} checkpoint missing at {}", dir.display())));
        }
        let hash = checkpoint_hash(&dir)?;
        let (w, s) = load_checkpoint(&dir)?;
        let per_seed = seeds
            .iter()
            .map(|&seed| Ok(record_fidelity(&w, &s, record, n_samples, seed)?.mean))
            .collect::<Result<Vec<f64>>>()?;
        points.push(ForgettingPoint {
            stage,
            mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            per_seed,
            checkpoint_hash: hash,
        });
    }
    Ok(ForgettingCurve {
        concept_id,
        seeds: seeds.to_vec(),
        n_samples,
        points,
    })
}
