//! Regularization masks, the weight-anchoring penalty and the full
//! personalization objective.

use serde::{Deserialize, Serialize};

use crate::diffusion::{diffusion_loss, diffusion_loss_and_grad, Example, ModelWeights, NoiseDraw, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{GradObjective, Parameter};
use crate::select::MaskSet;

/// `current AND (OR of previous)`; all-zero when there is no previous concept.
pub fn reg_mask(current: &MaskSet, previous: &[MaskSet]) -> Result<MaskSet> {
    let mut union = current.and_not(current)?;
    for p in previous {
        union = union.or(p)?;
    }
    current.and(&union)
}

fn check_same_shapes(a: &ModelWeights, b: &ModelWeights) -> Result<()> {
    if a.config != b.config {
        return Err(Error::Dimension {
            op: "reg_loss",
            left: vec![a.config.text_dim, a.config.key_dim, a.config.value_dim, a.config.blocks],
            right: vec![b.config.text_dim, b.config.key_dim, b.config.value_dim, b.config.blocks],
        });
    }
    Ok(())
}

/// Euclidean norm of `(a - b) ⊙ mask` taken jointly over all key/value layers.
fn masked_distance(a: &ModelWeights, b: &ModelWeights, mask: &MaskSet) -> f64 {
    let mut acc = 0.0;
    for (m, idx) in mask.masks.iter().zip(a.key_value_positions()) {
        let (x, y) = (a.value(idx).data(), b.value(idx).data());
        for i in m.ones_indices() {
            let d = x[i] - y[i];
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// `λ1 ‖(W_m − W_{m−1}) ⊙ M‖₂ + λ2 ‖(W_m − W_0) ⊙ M‖₂`.
pub fn reg_loss(
    current: &ModelWeights,
    previous: &ModelWeights,
    base: &ModelWeights,
    mask: &MaskSet,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    check_same_shapes(current, previous)?;
    check_same_shapes(current, base)?;
    mask.check_model(&current.config)?;
    let mut loss = 0.0;
    if lambda1 != 0.0 {
        loss += lambda1 * masked_distance(current, previous, mask);
    }
    if lambda2 != 0.0 {
        loss += lambda2 * masked_distance(current, base, mask);
    }
    Ok(loss)
}

/// Adds `∂ reg_loss / ∂ W_m` into the key/value gradients of `current`.
/// The norm's subgradient at zero is taken as zero.
pub fn reg_loss_grad(
    current: &mut ModelWeights,
    previous: &ModelWeights,
    base: &ModelWeights,
    mask: &MaskSet,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let loss = reg_loss(current, previous, base, mask, lambda1, lambda2)?;
    for (lambda, anchor) in [(lambda1, previous), (lambda2, base)] {
        if lambda == 0.0 {
            continue;
        }
        let norm = masked_distance(current, anchor, mask);
        if norm == 0.0 {
            continue;
        }
        let scale = lambda / norm;
        for (m, idx) in mask.masks.iter().zip(current.key_value_positions()) {
            let x = m.ones_indices();
            let a = anchor.value(idx).data();
            let p = &mut current.params[idx];
            if !p.trainable {
                continue;
            }
            for i in x {
                let d = p.value.data()[i] - a[i];
                p.grad.data_mut()[i] += scale * d;
            }
        }
    }
    Ok(loss)
}

/// Anchors for the regularizer: `W_{m−1}`, `W_0` and `M^reg`.
#[derive(Debug, Clone, Copy)]
pub struct RegTerm<'a> {
    pub previous: &'a ModelWeights,
    pub base: &'a ModelWeights,
    pub mask: &'a MaskSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Prior-preservation weight `λ`.
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

/// The three terms of the personalization objective and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub diffusion: f64,
    /// Unweighted prior diffusion loss (`0` when `λ = 0`).
    pub prior: f64,
    /// Weighted regularizer, already including `λ1` and `λ2`.
    pub reg: f64,
    pub total: f64,
}

/// One batch of the objective: concept pairs, prior pairs and their noise draws.
#[derive(Debug, Clone)]
pub struct ObjectiveBatch<'a> {
    pub concept: Vec<Example<'a>>,
    pub concept_draws: Vec<NoiseDraw>,
    pub prior: Vec<Example<'a>>,
    pub prior_draws: Vec<NoiseDraw>,
}

fn prior_in_use(batch: &ObjectiveBatch<'_>, w: &LossWeights) -> Result<bool> {
    if w.lambda == 0.0 {
        return Ok(false);
    }
    if batch.prior.is_empty() {
        return Err(Error::Usage("prior weight is positive but the prior batch is empty".into()));
    }
    Ok(true)
}

/// Concept diffusion loss `+ λ ·` prior diffusion loss `+` regularizer.
pub fn total_loss(
    batch: &ObjectiveBatch<'_>,
    schedule: &NoiseSchedule,
    weights: &ModelWeights,
    reg: Option<RegTerm<'_>>,
    lw: &LossWeights,
) -> Result<LossTerms> {
    let diffusion = diffusion_loss(&batch.concept, &batch.concept_draws, schedule, weights)?;
    let prior = if prior_in_use(batch, lw)? {
        diffusion_loss(&batch.prior, &batch.prior_draws, schedule, weights)?
    } else {
        0.0
    };
    let reg = match reg {
        Some(r) => reg_loss(weights, r.previous, r.base, r.mask, lw.lambda1, lw.lambda2)?,
        None => 0.0,
    };
    Ok(combine(diffusion, prior, reg, lw))
}

fn combine(diffusion: f64, prior: f64, reg: f64, lw: &LossWeights) -> LossTerms {
    let mut total = diffusion;
    if lw.lambda != 0.0 {
        total += lw.lambda * prior;
    }
    if reg != 0.0 {
        total += reg;
    }
    LossTerms {
        diffusion,
        prior,
        reg,
        total,
    }
}

/// [`total_loss`] plus its gradient, accumulated into trainable parameters.
pub fn total_loss_and_grad(
    batch: &ObjectiveBatch<'_>,
    schedule: &NoiseSchedule,
    weights: &mut ModelWeights,
    reg: Option<RegTerm<'_>>,
    lw: &LossWeights,
) -> Result<LossTerms> {
    let diffusion = diffusion_loss_and_grad(&batch.concept, &batch.concept_draws, schedule, weights, 1.0)?;
    let prior = if prior_in_use(batch, lw)? {
        diffusion_loss_and_grad(&batch.prior, &batch.prior_draws, schedule, weights, lw.lambda)?
    } else {
        0.0
    };
    let reg = match reg {
        Some(r) => reg_loss_grad(weights, r.previous, r.base, r.mask, lw.lambda1, lw.lambda2)?,
        None => 0.0,
    };
    Ok(combine(diffusion, prior, reg, lw))
}

/// The objective as a [`GradObjective`] over the weights' parameters.
pub struct PersonalizationObjective<'a> {
    pub weights: ModelWeights,
    pub batch: ObjectiveBatch<'a>,
    pub schedule: &'a NoiseSchedule,
    pub reg: Option<RegTerm<'a>>,
    pub loss_weights: LossWeights,
}

impl GradObjective for PersonalizationObjective<'_> {
    fn parameters(&self) -> &[Parameter] {
        &self.weights.params
    }

    fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.weights.params
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(total_loss(&self.batch, self.schedule, &self.weights, self.reg, &self.loss_weights)?.total)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.weights.zero_grads();
        Ok(total_loss_and_grad(&self.batch, self.schedule, &mut self.weights, self.reg, &self.loss_weights)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ModelConfig;
    use crate::numerics::{check_gradients, GradCheckConfig, RngState};
    use crate::select::NeuronMask;
    use rand::Rng;

    fn two_by_two(bits: [u8; 4]) -> NeuronMask {
        NeuronMask::from_fn("l", 2, 2, |r, c| bits[r * 2 + c] == 1)
    }

    #[test]
    fn reg_mask_examples() {
        let cfg = ModelConfig::default();
        let mut current = MaskSet::empty(&cfg);
        current.masks[0].set(0, 1, true);
        current.masks[0].set(1, 0, true);
        assert!(reg_mask(&current, &[]).unwrap().is_empty());

        let cur = MaskSet { masks: vec![two_by_two([0, 1, 1, 0])] };
        let prev = MaskSet { masks: vec![two_by_two([0, 1, 0, 0])] };
        let r = reg_mask(&cur, &[prev]).unwrap();
        assert_eq!(r.masks[0], two_by_two([0, 1, 0, 0]));
    }

    fn perturbed(w: &ModelWeights, seed: u64, scale: f64) -> ModelWeights {
        let mut out = w.clone();
        let mut rng = RngState::new(seed).rng();
        for idx in out.key_value_positions() {
            for v in out.params[idx].value.data_mut() {
                *v += scale * (rng.gen::<f64>() - 0.5);
            }
        }
        out
    }

    fn loop_oracle(a: &ModelWeights, b: &ModelWeights, c: &ModelWeights, mask: &MaskSet, l1: f64, l2: f64) -> f64 {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (k, idx) in a.key_value_positions().into_iter().enumerate() {
            let m = &mask.masks[k];
            for r in 0..m.rows() {
                for col in 0..m.cols() {
                    if m.get(r, col) {
                        let i = r * m.cols() + col;
                        let d1 = a.value(idx).data()[i] - b.value(idx).data()[i];
                        let d2 = a.value(idx).data()[i] - c.value(idx).data()[i];
                        s1 += d1 * d1;
                        s2 += d2 * d2;
                    }
                }
            }
        }
        l1 * s1.sqrt() + l2 * s2.sqrt()
    }

    #[test]
    fn reg_loss_matches_loop_oracle_and_finite_differences() {
        let w0 = ModelWeights::init(ModelConfig::default(), 1).unwrap();
        let prev = perturbed(&w0, 2, 0.1);
        let mut cur = perturbed(&prev, 3, 0.1);
        let mask = MaskSet::full(&w0.config);
        let got = reg_loss(&cur, &prev, &w0, &mask, 0.7, 1.3).unwrap();
        let want = loop_oracle(&cur, &prev, &w0, &mask, 0.7, 1.3);
        assert!((got - want).abs() <= 1e-12 * want);

        cur.zero_grads();
        cur.set_all_trainable(false);
        for idx in cur.key_value_positions() {
            cur.params[idx].trainable = true;
        }
        reg_loss_grad(&mut cur, &prev, &w0, &mask, 0.7, 1.3).unwrap();
        let h = 1e-6;
        for (idx, i) in [(cur.index.blocks[0].key, 5), (cur.index.blocks[3].value, 1000)] {
            let mut plus = cur.clone();
            plus.params[idx].value.data_mut()[i] += h;
            let mut minus = cur.clone();
            minus.params[idx].value.data_mut()[i] -= h;
            let num = (reg_loss(&plus, &prev, &w0, &mask, 0.7, 1.3).unwrap()
                - reg_loss(&minus, &prev, &w0, &mask, 0.7, 1.3).unwrap())
                / (2.0 * h);
            let ana = cur.params[idx].grad.data()[i];
            assert!((ana - num).abs() / ana.abs().max(num.abs()) < 1e-6, "{ana} vs {num}");
        }
    }

    #[test]
    fn reg_loss_zero_cases() {
        let w0 = ModelWeights::init(ModelConfig::default(), 1).unwrap();
        let other = perturbed(&w0, 2, 0.5);
        let empty = MaskSet::empty(&w0.config);
        assert_eq!(reg_loss(&other, &w0, &w0, &empty, 1.0, 1.0).unwrap(), 0.0);
        let full = MaskSet::full(&w0.config);
        assert_eq!(reg_loss(&w0, &w0, &w0, &full, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_with_anchors_apart() {
        use crate::data::{novel_specs, render_concept};
        use crate::diffusion::draw_noise;
        let w0 = ModelWeights::init(ModelConfig::default(), 4).unwrap();
        let prev = perturbed(&w0, 5, 0.05);
        let mut cur = perturbed(&prev, 6, 0.05);
        cur.set_all_trainable(false);
        for idx in cur.key_value_positions() {
            cur.params[idx].trainable = true;
        }
        cur.params[cur.index.token_embedding].trainable = true;
        let mut mask = MaskSet::empty(&w0.config);
        for (k, m) in mask.masks.iter_mut().enumerate() {
            for i in (k..m.len()).step_by(7) {
                m.set_flat(i, true);
            }
        }
        let schedule = NoiseSchedule::cosine(100);
        let c = render_concept(&novel_specs()[0], 1);
        let p = render_concept(&crate::data::held_in_specs()[0], 1);
        let batch = ObjectiveBatch {
            concept: vec![Example { image: &c.pixels, caption: &c.caption }],
            concept_draws: draw_noise(&mut RngState::new(1), 1, 100, 768),
            prior: vec![Example { image: &p.pixels, caption: &p.caption }],
            prior_draws: draw_noise(&mut RngState::new(2), 1, 100, 768),
        };
        let mut obj = PersonalizationObjective {
            weights: cur,
            batch,
            schedule: &schedule,
            reg: Some(RegTerm { previous: &prev, base: &w0, mask: &mask }),
            loss_weights: LossWeights { lambda: 0.8, lambda1: 5.0, lambda2: 3.0 },
        };
        let cfg = GradCheckConfig { max_entries_per_param: 30, ..Default::default() };
        let report = check_gradients(&mut obj, &cfg).unwrap();
        assert!(report.passed(), "max rel err {:e}", report.max_rel_err());
    }
}
