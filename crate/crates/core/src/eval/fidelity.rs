use serde::{Deserialize, Serialize};

use crate::continual::{ConceptRecord, ConceptRegistry};
use crate::data::{concept_prompt, match_spec, Caption, ConceptSpec};
use crate::diffusion::{encode_text, sample_many, ModelWeights, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Tensor};

/// Oracle agreement of samples from `a <new_m> on {background} background`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub mean: f64,
    /// Best single sample, standing in for best-of-n selection.
    pub best: f64,
    pub per_sample: Vec<f64>,
}

impl FidelityScore {
    fn from_scores(per_sample: Vec<f64>) -> Self {
        let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
        let best = per_sample.iter().copied().fold(0.0, f64::max);
        Self { mean, best, per_sample }
    }
}

/// Sample seed for image `k` of a fidelity run.
pub fn fidelity_sample_seed(seed: u64, token: usize, k: usize) -> u64 {
    derive_seed(seed, &[0xF1DE, token as u64, k as u64])
}

/// Samples `n_samples` images for `token` and returns them with their scores against `spec`.
pub fn token_samples(
    weights: &ModelWeights,
    schedule: &NoiseSchedule,
    token: usize,
    spec: &ConceptSpec,
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<Tensor>, FidelityScore)> {
    if n_samples == 0 {
        return Err(Error::Usage("fidelity needs at least one sample".into()));
    }
    let text = encode_text(&concept_prompt(token, spec.background_color)?, weights)?;
    let jobs: Vec<_> = (0..n_samples)
        .map(|k| (text.clone(), fidelity_sample_seed(seed, token, k)))
        .collect();
    let images = sample_many(&jobs, weights, schedule);
    let scores = images.iter().map(|img| match_spec(img, spec)).collect();
    Ok((images, FidelityScore::from_scores(scores)))
}

pub fn record_fidelity(
    weights: &ModelWeights,
    schedule: &NoiseSchedule,
    record: &ConceptRecord,
    n_samples: usize,
    seed: u64,
) -> Result<FidelityScore> {
    token_samples(weights, schedule, record.special_token, &record.spec, n_samples, seed).map(|(_, s)| s)
}

/// Fidelity of registry concept `concept_id` under the given checkpoint.
pub fn concept_fidelity(
    weights: &ModelWeights,
    schedule: &NoiseSchedule,
    registry: &ConceptRegistry,
    concept_id: usize,
    n_samples: usize,
    seed: u64,
) -> Result<FidelityScore> {
    record_fidelity(weights, schedule, registry.record(concept_id)?, n_samples, seed)
}

/// Per-concept oracle hits on `a <new_i> next to a <new_j>` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionHits {
    pub prompt: String,
    /// Fraction of samples whose match score for each concept reaches [`HIT_THRESHOLD`].
    pub hit_rate: [f64; 2],
    pub mean_score: [f64; 2],
}

pub const HIT_THRESHOLD: f64 = 0.5;

/// Samples the two-concept prompt and scores each image against both concepts.
pub fn composition_hits(
    weights: &ModelWeights,
    schedule: &NoiseSchedule,
    first: &ConceptRecord,
    second: &ConceptRecord,
    n_samples: usize,
    seed: u64,
) -> Result<CompositionHits> {
    if n_samples == 0 {
        return Err(Error::Usage("composition needs at least one sample".into()));
    }
    let word = |w: &str| crate::data::token_id(w).expect("vocabulary word");
    let tokens = [
        word("a"),
        first.special_token,
        word("next"),
        word("to"),
        word("a"),
        second.special_token,
    ];
    let caption = Caption::from_tokens(&tokens)?;
    let text = encode_text(&caption, weights)?;
    let jobs: Vec<_> = (0..n_samples)
        .map(|k| (text.clone(), derive_seed(seed, &[0xC011, k as u64])))
        .collect();
    let images = sample_many(&jobs, weights, schedule);
    let mut hit_rate = [0.0; 2];
    let mut mean_score = [0.0; 2];
    for img in &images {
        for (k, rec) in [first, second].into_iter().enumerate() {
            let s = match_spec(img, &rec.spec);
            mean_score[k] += s / n_samples as f64;
            if s >= HIT_THRESHOLD {
                hit_rate[k] += 1.0 / n_samples as f64;
            }
        }
    }
    Ok(CompositionHits {
        prompt: caption.text(),
        hit_rate,
        mean_score,
    })
}

/// Mean oracle score of arbitrary images against `spec`.
pub fn score_images(images: &[Tensor], spec: &ConceptSpec) -> FidelityScore {
    FidelityScore::from_scores(images.iter().map(|img| match_spec(img, spec)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{novel_specs, render_concept, special_token};
    use crate::diffusion::ModelConfig;

    #[test]
    fn ground_truth_renders_score_high() {
        for spec in novel_specs().iter().take(6) {
            let images: Vec<_> = (0..8).map(|k| render_concept(spec, k).pixels).collect();
            let s = score_images(&images, spec);
            assert!(s.mean > 0.9, "{} {}", spec.label(), s.mean);
            assert!(s.best >= s.mean);
        }
    }

    #[test]
    fn same_seed_same_score() {
        let w = ModelWeights::init(ModelConfig::default(), 3).unwrap();
        let s = NoiseSchedule::cosine(w.config.steps);
        let spec = novel_specs()[0];
        let tok = special_token(1).unwrap();
        let a = token_samples(&w, &s, tok, &spec, 2, 7).unwrap().1;
        let b = token_samples(&w, &s, tok, &spec, 2, 7).unwrap().1;
        assert_eq!(a, b);
        assert!(token_samples(&w, &s, tok, &spec, 0, 7).is_err());
    }
}
