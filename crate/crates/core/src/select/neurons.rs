use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::mask::MaskSet;
use super::scores::{importance_scores, select_mask, SelectionConfig};
use crate::data::Caption;
use crate::diffusion::{encode_text, ModelWeights};
use crate::error::{Error, Result};

/// Selection mask of one caption over every key/value matrix.
pub fn caption_mask(caption: &Caption, weights: &ModelWeights, config: &SelectionConfig) -> Result<MaskSet> {
    let text = encode_text(caption, weights)?;
    let masks = weights
        .key_value_paths()
        .into_iter()
        .zip(weights.key_value_positions())
        .map(|(path, idx)| {
            let scores = importance_scores(&path, weights.value(idx), &text.c)?;
            select_mask(&scores, config)
        })
        .collect::<Result<_>>()?;
    Ok(MaskSet { masks })
}

fn caption_masks(captions: &[Caption], weights: &ModelWeights, config: &SelectionConfig) -> Result<Vec<MaskSet>> {
    captions.par_iter().map(|c| caption_mask(c, weights, config)).collect()
}

fn and_all(sets: Vec<MaskSet>) -> Result<MaskSet> {
    let mut it = sets.into_iter();
    let first = it.next().ok_or_else(|| Error::Usage("no masks to aggregate".into()))?;
    it.try_fold(first, |acc, m| acc.and(&m))
}

/// AND over the captions of one concept's images, scored on `weights`.
pub fn base_mask(captions: &[Caption], weights: &ModelWeights, config: &SelectionConfig) -> Result<MaskSet> {
    if captions.is_empty() {
        return Err(Error::Usage("base mask needs at least one image caption".into()));
    }
    and_all(caption_masks(captions, weights, config)?)
}

/// AND over concept-free calibration prompts, scored on the pretrained weights.
pub fn general_mask(prompts: &[Caption], weights: &ModelWeights, config: &SelectionConfig) -> Result<MaskSet> {
    if prompts.is_empty() {
        return Err(Error::Usage("general mask needs at least one calibration prompt".into()));
    }
    if let Some(p) = prompts.iter().find(|p| p.contains_special()) {
        return Err(Error::Contamination(format!(
            "calibration prompt `{}` contains a special token",
            p.text()
        )));
    }
    and_all(caption_masks(prompts, weights, config)?)
}

/// `base AND NOT general`.
pub fn concept_mask(base: &MaskSet, general: &MaskSet) -> Result<MaskSet> {
    base.and_not(general)
}

/// Intersection over union, with popcounts summed over all layers first.
pub fn mask_miou(a: &MaskSet, b: &MaskSet) -> Result<f64> {
    let inter = a.and(b)?.popcount();
    let union = a.or(b)?.popcount();
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Density of the running AND over the first `k` prompt masks, for every `k`.
pub fn overlap_fraction_curve(prompts: &[Caption], weights: &ModelWeights, config: &SelectionConfig) -> Result<Vec<f64>> {
    let masks = caption_masks(prompts, weights, config)?;
    let mut running: Option<MaskSet> = None;
    let mut curve = Vec::with_capacity(masks.len());
    for m in masks {
        let next = match running {
            None => m,
            Some(r) => r.and(&m)?,
        };
        curve.push(next.popcount() as f64 / next.total_bits() as f64);
        running = Some(next);
    }
    Ok(curve)
}

/// CSV with columns `k,fraction`, `k` starting at 1.
pub fn overlap_csv(curve: &[f64]) -> String {
    let mut out = String::from("k,fraction\n");
    for (k, f) in curve.iter().enumerate() {
        writeln!(out, "{},{}", k + 1, f).unwrap();
    }
    out
}

pub fn write_overlap_csv(path: &Path, curve: &[f64]) -> Result<()> {
    fs::write(path, overlap_csv(curve)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_calibration_prompts, special_token};
    use crate::diffusion::ModelConfig;

    fn weights() -> ModelWeights {
        ModelWeights::init(ModelConfig::default(), 21).unwrap()
    }

    #[test]
    fn single_caption_is_aggregate_identity() {
        let w = weights();
        let prompts = make_calibration_prompts(1, 3).unwrap();
        let cfg = SelectionConfig::default();
        let one = caption_mask(&prompts[0], &w, &cfg).unwrap();
        assert_eq!(base_mask(&prompts, &w, &cfg).unwrap(), one);
        assert_eq!(general_mask(&prompts, &w, &cfg).unwrap(), one);
        assert_eq!(one.popcount(), 8 * 9 * 32);
    }

    #[test]
    fn special_tokens_contaminate_calibration() {
        let mut toks = vec![crate::data::token_id("a").unwrap()];
        toks.push(special_token(1).unwrap());
        let prompt = Caption::from_tokens(&toks).unwrap();
        let err = general_mask(&[prompt], &weights(), &SelectionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Contamination(_)));
        assert!(matches!(
            base_mask(&[], &weights(), &SelectionConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn miou_examples() {
        let cfg = ModelConfig::default();
        let mut a = MaskSet::empty(&cfg);
        let mut b = MaskSet::empty(&cfg);
        assert_eq!(mask_miou(&a, &b).unwrap(), 0.0);
        for i in [1, 2, 3] {
            a.masks[0].set_flat(i, true);
        }
        for i in [3, 4] {
            b.masks[0].set_flat(i, true);
        }
        assert_eq!(mask_miou(&a, &b).unwrap(), 0.25);
        assert_eq!(mask_miou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn full_general_mask_leaves_no_concept_neurons() {
        let cfg = ModelConfig::default();
        let base = MaskSet::full(&cfg);
        let c = concept_mask(&base, &MaskSet::full(&cfg)).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn overlap_curve_is_non_increasing_and_csv_shaped() {
        let w = weights();
        let prompts = make_calibration_prompts(6, 1).unwrap();
        let curve = overlap_fraction_curve(&prompts, &w, &SelectionConfig::default()).unwrap();
        assert!((curve[0] - 9.0 / 32.0).abs() < 1e-15);
        assert!(curve.windows(2).all(|p| p[1] <= p[0]));
        let csv = overlap_csv(&curve);
        assert!(csv.starts_with("k,fraction\n1,"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn column_selection_depends_on_the_caption() {
        let w = weights();
        let prompts = make_calibration_prompts(2, 5).unwrap();
        let cfg = SelectionConfig::default();
        let a = caption_mask(&prompts[0], &w, &cfg).unwrap();
        let b = caption_mask(&prompts[1], &w, &cfg).unwrap();
        assert_ne!(a, b);
    }
}
