use crate::diffusion::ModelWeights;
use crate::error::{Error, Result};
use crate::numerics::AdamSettings;
use crate::select::MaskSet;

/// Adam restricted to masked key/value entries and one token-embedding row.
///
/// Moments exist only for updatable scalars; every other parameter value is
/// left untouched by [`MaskedAdam::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAdam {
    pub neurons: AdamSettings,
    pub text: AdamSettings,
    pub step: u64,
    /// `(parameter index, flat entry)` pairs in ascending order.
    entries: Vec<(usize, usize)>,
    first: Vec<f64>,
    second: Vec<f64>,
    token_row: Option<usize>,
    token_first: Vec<f64>,
    token_second: Vec<f64>,
}

impl MaskedAdam {
    pub fn new(
        weights: &ModelWeights,
        masks: &MaskSet,
        special_token: Option<usize>,
        lr_neurons: f64,
        lr_text: f64,
    ) -> Result<Self> {
        masks.check_model(&weights.config)?;
        let mut entries = Vec::with_capacity(masks.popcount());
        for (m, idx) in masks.masks.iter().zip(weights.key_value_positions()) {
            if weights.value(idx).shape() != [m.rows(), m.cols()] {
                return Err(Error::Dimension {
                    op: "masked_adam",
                    left: weights.value(idx).shape().to_vec(),
                    right: vec![m.rows(), m.cols()],
                });
            }
            entries.extend(m.ones_indices().into_iter().map(|i| (idx, i)));
        }
        if let Some(tok) = special_token {
            if tok >= weights.config.vocab {
                return Err(Error::Vocabulary {
                    token: tok,
                    vocab: weights.config.vocab,
                });
            }
        }
        let n = entries.len();
        let d = if special_token.is_some() { weights.config.text_dim } else { 0 };
        Ok(Self {
            neurons: AdamSettings::with_lr(lr_neurons),
            text: AdamSettings::with_lr(lr_text),
            step: 0,
            entries,
            first: vec![0.0; n],
            second: vec![0.0; n],
            token_row: special_token,
            token_first: vec![0.0; d],
            token_second: vec![0.0; d],
        })
    }

    /// Number of scalars this optimizer may change.
    pub fn updatable(&self) -> usize {
        self.entries.len() + self.token_first.len()
    }

    /// One update from the gradients currently stored in `weights`.
    pub fn step(&mut self, weights: &mut ModelWeights) {
        self.step += 1;
        for (k, &(idx, i)) in self.entries.iter().enumerate() {
            let p = &mut weights.params[idx];
            let g = p.grad.data()[i];
            let delta = self.neurons.update(self.step, g, &mut self.first[k], &mut self.second[k]);
            p.value.data_mut()[i] -= delta;
        }
        if let Some(tok) = self.token_row {
            let d = weights.config.text_dim;
            let p = &mut weights.params[weights.index.token_embedding];
            for j in 0..d {
                let g = p.grad.data()[tok * d + j];
                let delta = self.text.update(self.step, g, &mut self.token_first[j], &mut self.token_second[j]);
                p.value.data_mut()[tok * d + j] -= delta;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ModelConfig;

    fn with_unit_grads() -> ModelWeights {
        let mut w = ModelWeights::init(ModelConfig::default(), 2).unwrap();
        for p in &mut w.params {
            p.grad.fill(1.0);
        }
        w
    }

    #[test]
    fn empty_mask_without_token_is_a_no_op() {
        let mut w = with_unit_grads();
        let before = w.clone();
        let mut opt = MaskedAdam::new(&w, &MaskSet::empty(&w.config), None, 1e-2, 1e-2).unwrap();
        opt.step(&mut w);
        assert!(w.bit_equal(&before));
        assert_eq!(opt.updatable(), 0);
    }

    #[test]
    fn single_bit_changes_one_scalar_plus_token_row() {
        let mut w = with_unit_grads();
        let before = w.clone();
        let mut mask = MaskSet::empty(&w.config);
        mask.masks[5].set(3, 7, true);
        let tok = 120;
        let mut opt = MaskedAdam::new(&w, &mask, Some(tok), 1e-2, 1e-2).unwrap();
        opt.step(&mut w);
        let mut changed = Vec::new();
        for (pi, (a, b)) in w.params.iter().zip(&before.params).enumerate() {
            for (i, (x, y)) in a.value.data().iter().zip(b.value.data()).enumerate() {
                if x.to_bits() != y.to_bits() {
                    changed.push((pi, i));
                }
            }
        }
        let kv = w.key_value_positions()[5];
        let d = w.config.text_dim;
        let mut expected = vec![(kv, 3 * w.config.value_dim + 7)];
        expected.extend((0..d).map(|j| (w.index.token_embedding, tok * d + j)));
        expected.sort_unstable();
        changed.sort_unstable();
        assert_eq!(changed, expected);
    }
}
