//! Pretraining of the base model `W_0` on held-in concepts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, load_tensors, save_checkpoint, save_tensors, Dtype};
use super::config::ModelConfig;
use super::loss::{diffusion_loss_and_grad, draw_noise, Example};
use super::model::encode_text;
use super::sampler::sample_many;
use super::schedule::NoiseSchedule;
use super::weights::ModelWeights;
use crate::data::{caption_for, classify_image, held_in_specs, Caption, ConceptSpec, ImageSample};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Adam, AdamSettings, RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate.
    pub lr: f64,
    /// Linear warmup length in steps.
    pub warmup: usize,
    /// Final learning rate as a fraction of the peak (cosine decay).
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 18_000,
            batch_size: 32,
            lr: 2e-3,
            warmup: 200,
            final_lr_fraction: 0.05,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Usage("pretraining needs steps >= 1 and batch_size >= 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Usage("pretraining learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = (self.steps - self.warmup.min(self.steps)).max(1) as f64;
        let progress = ((step - self.warmup) as f64 / span).min(1.0);
        let floor = self.final_lr_fraction;
        self.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Resumable pretraining state.
#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub config: PretrainConfig,
    pub weights: ModelWeights,
    pub schedule: NoiseSchedule,
    pub adam: Adam,
    /// Completed steps.
    pub step: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Serialize, Deserialize)]
struct RunState {
    config: PretrainConfig,
    step: usize,
    adam_step: u64,
    curve: Vec<CurvePoint>,
}

/// Rejects corpora containing novel concepts.
pub fn check_corpus(corpus: &[ImageSample]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Usage("empty pretraining corpus".into()));
    }
    if let Some(s) = corpus.iter().find(|s| s.spec.is_novel || s.caption.contains_special()) {
        return Err(Error::Contamination(format!(
            "pretraining corpus contains novel concept {}",
            s.spec.label()
        )));
    }
    Ok(())
}

impl PretrainRun {
    pub fn new(model: ModelConfig, config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        let mut weights = ModelWeights::init(model, config.seed)?;
        weights.set_all_trainable(true);
        let adam = Adam::new(AdamSettings::with_lr(config.lr), &weights.params);
        Ok(Self {
            config,
            schedule: NoiseSchedule::cosine(model.steps),
            weights,
            adam,
            step: 0,
            curve: Vec::new(),
        })
    }

    /// Runs one optimizer step on a batch addressed by `(seed, step)`.
    pub fn train_step(&mut self, corpus: &[ImageSample]) -> Result<f64> {
        let cfg = &self.config;
        let mut rng = RngState::new(derive_seed(cfg.seed, &[0xB47C, self.step as u64]));
        let mut pick = rng.next_stream();
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| pick.gen_range(0..corpus.len())).collect();
        let examples: Vec<Example> = batch
            .iter()
            .map(|&i| Example {
                image: &corpus[i].pixels,
                caption: &corpus[i].caption,
            })
            .collect();
        let draws = draw_noise(&mut rng, batch.len(), self.schedule.steps(), self.weights.config.image_len());
        self.weights.zero_grads();
        let loss = diffusion_loss_and_grad(&examples, &draws, &self.schedule, &mut self.weights, 1.0)?;
        let lr = cfg.lr_at(self.step);
        self.adam.settings.lr = lr;
        self.adam.step(&mut self.weights.params);
        self.curve.push(CurvePoint { step: self.step, loss, lr });
        self.step += 1;
        Ok(loss)
    }

    /// Trains until `until` steps are complete (capped at the configured total).
    pub fn train_until(&mut self, corpus: &[ImageSample], until: usize) -> Result<()> {
        check_corpus(corpus)?;
        while self.step < until.min(self.config.steps) {
            self.train_step(corpus)?;
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Writes the checkpoint, optimizer moments and run state into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.weights, &self.schedule, Dtype::F64)?;
        let names: Vec<String> = self.weights.params.iter().map(|p| p.name.clone()).collect();
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        for (n, m) in names.iter().zip(&self.adam.first) {
            tensors.push((format!("{n}.m"), m));
        }
        for (n, v) in names.iter().zip(&self.adam.second) {
            tensors.push((format!("{n}.v"), v));
        }
        let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        save_tensors(&dir.join("optimizer"), &self.weights.config, &self.schedule, &refs, Dtype::F64)?;
        let state = RunState {
            config: self.config,
            step: self.step,
            adam_step: self.adam.step,
            curve: self.curve.clone(),
        };
        let path = dir.join("run_state.json");
        fs::write(&path, serde_json::to_vec_pretty(&state)?).map_err(|e| Error::io(&path, e))?;
        write_curve_csv(&dir.join("training_curve.csv"), &self.curve)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (mut weights, schedule) = load_checkpoint(dir)?;
        weights.set_all_trainable(true);
        let path = dir.join("run_state.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let state: RunState = serde_json::from_slice(&bytes).map_err(|e| Error::integrity(&path, e.to_string()))?;
        let (_, moments) = load_tensors(&dir.join("optimizer"))?;
        let n = weights.params.len();
        if moments.len() != 2 * n {
            return Err(Error::integrity(dir, "optimizer state does not match the checkpoint"));
        }
        let mut moments = moments.into_iter().map(|(_, t)| t);
        let first: Vec<Tensor> = moments.by_ref().take(n).collect();
        let second: Vec<Tensor> = moments.collect();
        let mut adam = Adam::new(AdamSettings::with_lr(state.config.lr), &weights.params);
        adam.first = first;
        adam.second = second;
        adam.step = state.adam_step;
        Ok(Self {
            config: state.config,
            weights,
            schedule,
            adam,
            step: state.step,
            curve: state.curve,
        })
    }
}

/// Trains `W_0` from scratch on `corpus`.
pub fn pretrain(corpus: &[ImageSample], model: ModelConfig, config: PretrainConfig) -> Result<PretrainRun> {
    check_corpus(corpus)?;
    let mut run = PretrainRun::new(model, config)?;
    run.train_until(corpus, config.steps)?;
    Ok(run)
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("step,loss,lr\n");
    for p in curve {
        writeln!(out, "{},{},{}", p.step, p.loss, p.lr).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-prompt outcome of the held-in attribute check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCheck {
    pub caption: String,
    pub spec_label: String,
    pub agreement: usize,
    pub confidence: f64,
}

/// Held-in captions used by [`attribute_accuracy`].
pub fn held_in_prompts(count: usize, seed: u64) -> Result<Vec<(ConceptSpec, Caption)>> {
    let specs = held_in_specs();
    if count > specs.len() {
        return Err(Error::Capacity(format!("{count} prompts requested, {} held-in specs", specs.len())));
    }
    let mut rng = RngState::at(seed, 0xACC).rng();
    let mut idx = sample_indices(&mut rng, specs.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| {
            let spec = specs[i];
            Ok((spec, caption_for(&spec, derive_seed(seed, &[i as u64]), None)?))
        })
        .collect()
}

/// Mean fraction of (shape, fill, background) recovered by the oracle on one
/// sample per held-in prompt.
pub fn attribute_accuracy(
    weights: &ModelWeights,
    schedule: &NoiseSchedule,
    prompts: usize,
    seed: u64,
) -> Result<(f64, Vec<AttributeCheck>)> {
    let items = held_in_prompts(prompts, seed)?;
    let jobs = items
        .iter()
        .enumerate()
        .map(|(k, (_, caption))| Ok((encode_text(caption, weights)?, derive_seed(seed, &[0x5A, k as u64]))))
        .collect::<Result<Vec<_>>>()?;
    let images = sample_many(&jobs, weights, schedule);
    let checks: Vec<AttributeCheck> = items
        .iter()
        .zip(&images)
        .map(|((spec, caption), img)| {
            let c = classify_image(img);
            AttributeCheck {
                caption: caption.text(),
                spec_label: spec.label(),
                agreement: c.agreement(spec),
                confidence: c.confidence,
            }
        })
        .collect();
    let acc = checks.iter().map(|c| c.agreement as f64 / 3.0).sum::<f64>() / checks.len() as f64;
    Ok((acc, checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{novel_specs, pretraining_corpus, render_concept};

    fn small() -> PretrainConfig {
        PretrainConfig {
            steps: 12,
            batch_size: 4,
            warmup: 3,
            ..Default::default()
        }
    }

    #[test]
    fn novel_corpus_is_contamination() {
        let corpus = vec![render_concept(&novel_specs()[0], 1)];
        let err = pretrain(&corpus, ModelConfig::default(), small()).unwrap_err();
        assert!(matches!(err, Error::Contamination(_)));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = pretraining_corpus(1, 3);
        let full = pretrain(&corpus, ModelConfig::default(), small()).unwrap();
        let mut half = PretrainRun::new(ModelConfig::default(), small()).unwrap();
        half.train_until(&corpus, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        half.save(dir.path()).unwrap();
        let mut resumed = PretrainRun::load(dir.path()).unwrap();
        resumed.train_until(&corpus, usize::MAX).unwrap();
        assert!(resumed.weights.bit_equal(&full.weights));
        assert_eq!(resumed.curve, full.curve);
    }

    #[test]
    fn loss_decreases_over_first_hundred_steps() {
        let corpus = pretraining_corpus(2, 0);
        let windows: Vec<Vec<f64>> = (0..3)
            .map(|seed| {
                let config = PretrainConfig {
                    steps: 100,
                    seed,
                    ..Default::default()
                };
                let run = pretrain(&corpus, ModelConfig::default(), config).unwrap();
                run.curve.chunks(10).map(|c| c.iter().map(|p| p.loss).sum::<f64>() / 10.0).collect()
            })
            .collect();
        let median: Vec<f64> = (0..10)
            .map(|k| {
                let mut v: Vec<f64> = windows.iter().map(|w| w[k]).collect();
                v.sort_by(f64::total_cmp);
                v[1]
            })
            .collect();
        for pair in median.windows(2) {
            assert!(pair[1] < pair[0], "10-step median losses {median:?}");
        }
    }

    #[test]
    fn lr_schedule_warms_up_and_decays() {
        let c = PretrainConfig::default();
        assert!(c.lr_at(0) < c.lr_at(c.warmup - 1));
        assert!((c.lr_at(c.warmup) - c.lr).abs() < 1e-15);
        assert!((c.lr_at(c.steps - 1) - c.lr * c.final_lr_fraction).abs() < 1e-6 * c.lr);
    }
}
