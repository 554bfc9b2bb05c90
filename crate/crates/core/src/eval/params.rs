use serde::{Deserialize, Serialize};

use crate::diffusion::{key_value_paths, parameter_layout, ModelConfig};
use crate::error::Result;
use crate::select::MaskSet;

/// How much of the model one mask set lets an optimizer touch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterFractions {
    pub mask_bits: usize,
    pub key_value_params: usize,
    pub total_params: usize,
    /// `mask_bits / key_value_params`.
    pub key_value_fraction: f64,
    /// `mask_bits / total_params`.
    pub total_fraction: f64,
}

pub fn parameter_update_fraction(masks: &MaskSet, config: &ModelConfig) -> Result<ParameterFractions> {
    masks.check_model(config)?;
    let kv: Vec<String> = key_value_paths(config);
    let layout = parameter_layout(config);
    let size = |shape: &Vec<usize>| shape.iter().product::<usize>();
    let total_params: usize = layout.iter().map(|(_, s)| size(s)).sum();
    let key_value_params: usize = layout.iter().filter(|(n, _)| kv.contains(n)).map(|(_, s)| size(s)).sum();
    let mask_bits = masks.popcount();
    Ok(ParameterFractions {
        mask_bits,
        key_value_params,
        total_params,
        key_value_fraction: mask_bits as f64 / key_value_params as f64,
        total_fraction: mask_bits as f64 / total_params as f64,
    })
}

/// `concept_id,mask_bits,key_value_params,total_params,key_value_fraction,total_fraction`.
pub fn params_csv(rows: &[(usize, ParameterFractions)]) -> String {
    let mut out = String::from("concept_id,mask_bits,key_value_params,total_params,key_value_fraction,total_fraction\n");
    for (id, f) in rows {
        out.push_str(&format!(
            "{id},{},{},{},{:.8},{:.8}\n",
            f.mask_bits, f.key_value_params, f.total_params, f.key_value_fraction, f.total_fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_full_masks() {
        let cfg = ModelConfig::default();
        let zero = parameter_update_fraction(&MaskSet::empty(&cfg), &cfg).unwrap();
        assert_eq!((zero.key_value_fraction, zero.total_fraction), (0.0, 0.0));
        let full = parameter_update_fraction(&MaskSet::full(&cfg), &cfg).unwrap();
        assert_eq!(full.key_value_fraction, 1.0);
        let kv = 2 * cfg.blocks * cfg.text_dim * cfg.key_dim;
        assert_eq!(full.key_value_params, kv);
        assert_eq!(full.total_fraction, kv as f64 / full.total_params as f64);
    }
}
