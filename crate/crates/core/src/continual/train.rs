use std::fmt::Write as _;
use std::fs;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::config::{MaskStrategy, TrainConfig};
use super::objective::{reg_mask, total_loss_and_grad, LossTerms, ObjectiveBatch, RegTerm};
use super::optim::MaskedAdam;
use super::registry::{ConceptRecord, ConceptRegistry, MaskCounts};
use crate::data::{caption_for, held_in_specs, render_concept, token_id, Caption, ConceptSpec};
use crate::diffusion::{
    draw_noise, encode_text, sample_many, save_checkpoint, Dtype, Example, ModelWeights, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, RngState, Tensor};
use crate::select::{base_mask, concept_mask, save_mask_set, MaskSet};

pub const LOSS_CSV: &str = "loss.csv";

/// Pairs sampled from `W_0` on held-in captions.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBatch {
    pub images: Vec<Tensor>,
    pub captions: Vec<Caption>,
}

impl PriorBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Samples `size` images from `w0` on random held-in captions.
pub fn prior_batch(w0: &ModelWeights, schedule: &NoiseSchedule, size: usize, seed: u64) -> Result<PriorBatch> {
    let specs = held_in_specs();
    let mut rng = RngState::at(seed, 0x9A).rng();
    let captions = (0..size)
        .map(|k| {
            let spec = specs[rng.gen_range(0..specs.len())];
            caption_for(&spec, derive_seed(seed, &[k as u64]), None)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs = captions
        .iter()
        .enumerate()
        .map(|(k, c)| Ok((encode_text(c, w0)?, derive_seed(seed, &[0x5E, k as u64]))))
        .collect::<Result<Vec<_>>>()?;
    Ok(PriorBatch {
        images: sample_many(&jobs, w0, schedule),
        captions,
    })
}

/// Renders `n` jittered images of `spec`, captioned with the special token.
pub fn concept_training_set(spec: &ConceptSpec, token: usize, n: usize, seed: u64) -> Result<(Vec<Tensor>, Vec<Caption>)> {
    let mut images = Vec::with_capacity(n);
    let mut captions = Vec::with_capacity(n);
    for k in 0..n {
        let s = derive_seed(seed, &[spec.id() as u64, k as u64]);
        images.push(render_concept(spec, s).pixels);
        captions.push(caption_for(spec, s, Some(token))?);
    }
    Ok((images, captions))
}

/// Random mask with the same popcount as `like` in every layer.
pub fn random_mask_like(like: &MaskSet, seed: u64) -> MaskSet {
    let mut out = like.and_not(like).expect("same coverage");
    for (k, (dst, src)) in out.masks.iter_mut().zip(&like.masks).enumerate() {
        let mut rng = RngState::at(seed, k as u64).rng();
        for i in sample_indices(&mut rng, src.len(), src.popcount()) {
            dst.set_flat(i, true);
        }
    }
    out
}

/// Masks computed while preparing one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionMasks {
    pub base: MaskSet,
    pub general: MaskSet,
    pub concept: MaskSet,
    /// Entries the optimizer may update (the concept mask unless an ablation is selected).
    pub trained: MaskSet,
    pub reg: MaskSet,
}

/// In-progress training of one concept.
#[derive(Debug, Clone)]
pub struct ConceptSession {
    pub concept_id: usize,
    pub special_token: usize,
    pub spec: ConceptSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub base: ModelWeights,
    pub previous: ModelWeights,
    pub weights: ModelWeights,
    pub masks: SessionMasks,
    pub prior: PriorBatch,
    pub images: Vec<Tensor>,
    pub captions: Vec<Caption>,
    pub optimizer: MaskedAdam,
    pub curve: Vec<LossTerms>,
    pub step: usize,
}

/// Snapshots `W_{m−1}`, builds the masks and prior set, and initializes the
/// special token from the concept's shape word.
pub fn begin_concept(
    registry: &mut ConceptRegistry,
    spec: &ConceptSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<ConceptSession> {
    config.validate()?;
    if !spec.is_novel {
        return Err(Error::Contamination(format!(
            "{} is a held-in concept seen during pretraining",
            spec.label()
        )));
    }
    let token = registry.next_special_token()?;
    let concept_id = registry.len() + 1;
    let (w0, schedule) = registry.load_w0()?;
    let (previous, _) = registry.load_current()?;
    if previous.config != w0.config {
        return Err(Error::integrity(registry.current_dir(), "current checkpoint does not match W_0"));
    }

    let mut weights = previous.clone();
    let d = weights.config.text_dim;
    let source = token_id(spec.shape.word()).expect("shape words are in the vocabulary");
    let emb = &mut weights.params[weights.index.token_embedding].value;
    let row = emb.row(source).to_vec();
    emb.data_mut()[token * d..(token + 1) * d].copy_from_slice(&row);

    let (images, captions) = concept_training_set(spec, token, config.images_per_concept, seed)?;
    let selection = registry.selection();
    // Scores depend only on key/value weights, which equal W_{m-1} here.
    let base = base_mask(&captions, &weights, &selection)?;
    let general = registry.general_mask(&w0)?;
    let concept = concept_mask(&base, &general)?;
    let trained = match config.strategy {
        MaskStrategy::Concept => concept.clone(),
        MaskStrategy::Random => random_mask_like(&concept, derive_seed(seed, &[concept_id as u64, 0x4A])),
        MaskStrategy::All => MaskSet::full(&weights.config),
    };
    let reg = reg_mask(&trained, &registry.all_masks()?)?;
    let prior = if config.loss_weights.lambda > 0.0 {
        prior_batch(&w0, &schedule, config.prior_set_size, derive_seed(seed, &[concept_id as u64, 0x9]))?
    } else {
        PriorBatch {
            images: Vec::new(),
            captions: Vec::new(),
        }
    };

    weights.set_all_trainable(false);
    for idx in weights.key_value_positions() {
        weights.params[idx].trainable = true;
    }
    weights.params[weights.index.token_embedding].trainable = true;
    let optimizer = MaskedAdam::new(&weights, &trained, Some(token), config.lr_neurons, config.lr_text)?;

    Ok(ConceptSession {
        concept_id,
        special_token: token,
        spec: *spec,
        config: *config,
        seed,
        schedule,
        base: w0,
        previous,
        weights,
        masks: SessionMasks {
            base,
            general,
            concept,
            trained,
            reg,
        },
        prior,
        images,
        captions,
        optimizer,
        curve: Vec::new(),
        step: 0,
    })
}

impl ConceptSession {
    /// One objective evaluation and masked update.
    pub fn train_step(&mut self) -> Result<LossTerms> {
        let mut rng = RngState::new(derive_seed(self.seed, &[self.concept_id as u64, self.step as u64]));
        let len = self.weights.config.image_len();
        let steps = self.schedule.steps();
        let concept: Vec<Example> = self
            .images
            .iter()
            .zip(&self.captions)
            .map(|(image, caption)| Example { image, caption })
            .collect();
        let concept_draws = draw_noise(&mut rng, concept.len(), steps, len);
        let (prior, prior_draws) = if self.prior.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let mut pick = rng.next_stream();
            let idx: Vec<usize> = (0..self.config.prior_batch)
                .map(|_| pick.gen_range(0..self.prior.len()))
                .collect();
            let ex: Vec<Example> = idx
                .iter()
                .map(|&i| Example {
                    image: &self.prior.images[i],
                    caption: &self.prior.captions[i],
                })
                .collect();
            let draws = draw_noise(&mut rng, ex.len(), steps, len);
            (ex, draws)
        };
        let batch = ObjectiveBatch {
            concept,
            concept_draws,
            prior,
            prior_draws,
        };
        self.weights.zero_grads();
        let reg = RegTerm {
            previous: &self.previous,
            base: &self.base,
            mask: &self.masks.reg,
        };
        let terms = total_loss_and_grad(&batch, &self.schedule, &mut self.weights, Some(reg), &self.config.loss_weights)?;
        self.optimizer.step(&mut self.weights);
        self.curve.push(terms);
        self.step += 1;
        Ok(terms)
    }

    /// Runs the remaining configured steps.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.config.steps {
            self.train_step()?;
        }
        Ok(())
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,diffusion_term,prior_term,reg_term,total\n");
        for (k, t) in self.curve.iter().enumerate() {
            writeln!(out, "{k},{},{},{},{}", t.diffusion, t.prior, t.reg, t.total).unwrap();
        }
        out
    }
}

/// Stores the trained mask set and loss curve, replaces the current
/// checkpoint with `W_m` and appends the record.
pub fn finish_concept(registry: &mut ConceptRegistry, session: &ConceptSession) -> Result<ConceptRecord> {
    let rel = ConceptRegistry::concept_dir_name(session.concept_id);
    let dir = registry.root().join(&rel);
    let masks_hash = save_mask_set(&dir, &session.masks.trained)?;
    let csv_path = dir.join(LOSS_CSV);
    fs::write(&csv_path, session.loss_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let mut weights = session.weights.clone();
    weights.set_all_trainable(false);
    let checkpoint_hash = save_checkpoint(&registry.current_dir(), &weights, &session.schedule, Dtype::F64)?;
    let m = &session.masks;
    let record = ConceptRecord {
        concept_id: session.concept_id,
        special_token: session.special_token,
        spec: session.spec,
        strategy: session.config.strategy,
        masks_dir: rel.clone(),
        masks_hash,
        counts: MaskCounts {
            base: m.base.popcount(),
            general: m.general.popcount(),
            concept: m.concept.popcount(),
            reg: m.reg.popcount(),
            trained: m.trained.popcount(),
        },
        steps: session.step,
        seed: session.seed,
        loss_csv: format!("{rel}/{LOSS_CSV}"),
        checkpoint_hash,
    };
    registry.push_record(record.clone())?;
    Ok(record)
}

/// Learns one novel concept end to end and updates the registry.
pub fn train_concept(
    registry: &mut ConceptRegistry,
    spec: &ConceptSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ConceptRecord, ConceptSession)> {
    let mut session = begin_concept(registry, spec, config, seed)?;
    session.run()?;
    let record = finish_concept(registry, &session)?;
    Ok((record, session))
}

/// Scalars that differ between `before` and `after` outside the allowed
/// mask bits and the special-token row.
pub fn isolation_violations(
    before: &ModelWeights,
    after: &ModelWeights,
    allowed: &MaskSet,
    special_token: Option<usize>,
) -> Result<Vec<(String, usize)>> {
    if before.config != after.config || before.params.len() != after.params.len() {
        return Err(Error::Usage("weights come from different configs".into()));
    }
    allowed.check_model(&before.config)?;
    let kv = before.key_value_positions();
    let d = before.config.text_dim;
    let mut out = Vec::new();
    for (pi, (a, b)) in before.params.iter().zip(&after.params).enumerate() {
        let mask = kv.iter().position(|&k| k == pi).map(|k| &allowed.masks[k]);
        for (i, (x, y)) in a.value.data().iter().zip(b.value.data()).enumerate() {
            if x.to_bits() == y.to_bits() {
                continue;
            }
            let ok = match mask {
                Some(m) => m.get_flat(i),
                None => pi == before.index.token_embedding && special_token.is_some_and(|t| i / d == t),
            };
            if !ok {
                out.push((a.name.clone(), i));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::novel_specs;
    use crate::diffusion::ModelConfig;
    use crate::select::SelectionConfig;

    fn quick() -> TrainConfig {
        TrainConfig {
            steps: 3,
            prior_set_size: 2,
            prior_batch: 1,
            images_per_concept: 2,
            ..Default::default()
        }
    }

    fn registry(dir: &std::path::Path) -> ConceptRegistry {
        let w = ModelWeights::init(ModelConfig::default(), 1).unwrap();
        ConceptRegistry::create(dir, &w, &NoiseSchedule::cosine(100), SelectionConfig::default(), 20, 0).unwrap()
    }

    #[test]
    fn held_in_spec_is_contamination() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = registry(dir.path());
        let err = train_concept(&mut reg, &held_in_specs()[0], &quick(), 1).unwrap_err();
        assert!(matches!(err, Error::Contamination(_)));
    }

    #[test]
    fn short_run_is_isolated_and_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = registry(dir.path());
        let (before, _) = reg.load_current().unwrap();
        let (rec, session) = train_concept(&mut reg, &novel_specs()[0], &quick(), 1).unwrap();
        let (after, _) = reg.load_current().unwrap();
        let bad = isolation_violations(&before, &after, &session.masks.trained, Some(rec.special_token)).unwrap();
        assert!(bad.is_empty(), "{bad:?}");
        assert_eq!(rec.concept_id, 1);
        assert_eq!(reg.len(), 1);
        assert!(session.masks.concept.is_subset_of(&session.masks.base).unwrap());
        assert!(session.masks.concept.is_disjoint_from(&session.masks.general).unwrap());
        assert!(session.masks.reg.is_empty());
        let csv = fs::read_to_string(dir.path().join(&rec.loss_csv)).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let reopened = ConceptRegistry::open(dir.path()).unwrap();
        assert_eq!(reopened.records(), reg.records());
    }

    #[test]
    fn random_mask_keeps_layer_cardinality() {
        let cfg = ModelConfig::default();
        let mut like = MaskSet::empty(&cfg);
        for i in 0..40 {
            like.masks[2].set_flat(i * 3, true);
        }
        let r = random_mask_like(&like, 9);
        for (a, b) in r.masks.iter().zip(&like.masks) {
            assert_eq!(a.popcount(), b.popcount());
        }
        assert_ne!(r, like);
    }
}
