use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Parameter, RngState, Tensor};

/// Parameter positions for one denoiser block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIndex {
    pub norm0_gain: usize,
    pub norm0_bias: usize,
    pub self_query: usize,
    pub self_key: usize,
    pub self_value: usize,
    pub self_out: usize,
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub query: usize,
    pub key: usize,
    pub value: usize,
    pub out: usize,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
    pub fc1_weight: usize,
    pub fc1_bias: usize,
    pub fc2_weight: usize,
    pub fc2_bias: usize,
}

/// Parameter positions in [`ModelWeights::params`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightIndex {
    pub token_embedding: usize,
    pub positional_embedding: usize,
    pub time_embedding: usize,
    pub patch_weight: usize,
    pub patch_bias: usize,
    pub patch_position: usize,
    pub blocks: Vec<BlockIndex>,
    pub final_gain: usize,
    pub final_bias: usize,
    pub unpatch_weight: usize,
    pub unpatch_bias: usize,
}

/// Layer path of a block's cross-attention key or value matrix.
pub fn key_path(block: usize) -> String {
    format!("block{block}.cross_attn.key")
}

pub fn value_path(block: usize) -> String {
    format!("block{block}.cross_attn.value")
}

/// All parameters of the denoiser in a stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub params: Vec<Parameter>,
    pub index: WeightIndex,
}

/// Name and shape of every parameter, in storage order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let c = config;
    let mut out = vec![
        ("token_embedding".to_string(), vec![c.vocab, c.text_dim]),
        ("positional_embedding".to_string(), vec![c.text_len, c.text_dim]),
        ("time_embedding".to_string(), vec![c.steps, c.width]),
        ("patch_embed.weight".to_string(), vec![c.patch_dim(), c.width]),
        ("patch_embed.bias".to_string(), vec![c.width]),
        ("patch_embed.position".to_string(), vec![c.patches(), c.width]),
    ];
    for b in 0..c.blocks {
        out.extend([
            (format!("block{b}.norm0.gain"), vec![c.width]),
            (format!("block{b}.norm0.bias"), vec![c.width]),
            (format!("block{b}.self_attn.query"), vec![c.width, c.width]),
            (format!("block{b}.self_attn.key"), vec![c.width, c.width]),
            (format!("block{b}.self_attn.value"), vec![c.width, c.width]),
            (format!("block{b}.self_attn.out"), vec![c.width, c.width]),
            (format!("block{b}.norm1.gain"), vec![c.width]),
            (format!("block{b}.norm1.bias"), vec![c.width]),
            (format!("block{b}.cross_attn.query"), vec![c.width, c.key_dim]),
            (key_path(b), vec![c.text_dim, c.key_dim]),
            (value_path(b), vec![c.text_dim, c.value_dim]),
            (format!("block{b}.cross_attn.out"), vec![c.value_dim, c.width]),
            (format!("block{b}.norm2.gain"), vec![c.width]),
            (format!("block{b}.norm2.bias"), vec![c.width]),
            (format!("block{b}.mlp.fc1.weight"), vec![c.width, c.mlp_hidden]),
            (format!("block{b}.mlp.fc1.bias"), vec![c.mlp_hidden]),
            (format!("block{b}.mlp.fc2.weight"), vec![c.mlp_hidden, c.width]),
            (format!("block{b}.mlp.fc2.bias"), vec![c.width]),
        ]);
    }
    out.extend([
        ("final_norm.gain".to_string(), vec![c.width]),
        ("final_norm.bias".to_string(), vec![c.width]),
        ("patch_unembed.weight".to_string(), vec![c.width, c.patch_dim()]),
        ("patch_unembed.bias".to_string(), vec![c.patch_dim()]),
    ]);
    out
}

fn build_index(config: &ModelConfig) -> WeightIndex {
    let per_block = 18;
    let head = 6;
    let blocks = (0..config.blocks)
        .map(|b| {
            let o = head + b * per_block;
            BlockIndex {
                norm0_gain: o,
                norm0_bias: o + 1,
                self_query: o + 2,
                self_key: o + 3,
                self_value: o + 4,
                self_out: o + 5,
                norm1_gain: o + 6,
                norm1_bias: o + 7,
                query: o + 8,
                key: o + 9,
                value: o + 10,
                out: o + 11,
                norm2_gain: o + 12,
                norm2_bias: o + 13,
                fc1_weight: o + 14,
                fc1_bias: o + 15,
                fc2_weight: o + 16,
                fc2_bias: o + 17,
            }
        })
        .collect();
    let tail = head + config.blocks * per_block;
    WeightIndex {
        token_embedding: 0,
        positional_embedding: 1,
        time_embedding: 2,
        patch_weight: 3,
        patch_bias: 4,
        patch_position: 5,
        blocks,
        final_gain: tail,
        final_bias: tail + 1,
        unpatch_weight: tail + 2,
        unpatch_bias: tail + 3,
    }
}

impl ModelWeights {
    /// Random initialization: unit-scale embeddings, `1/sqrt(fan_in)` for
    /// projections, damped residual outputs, unit gains and zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::at(seed, 0x1417).rng();
        let mut params = Vec::new();
        for (name, shape) in parameter_layout(&config) {
            let n: usize = shape.iter().product();
            let std = if name.ends_with("gain") {
                None
            } else if name.ends_with("bias") {
                Some(0.0)
            } else if name.contains("embedding") || name.ends_with("position") {
                Some(if name == "time_embedding" || name.ends_with("position") { 0.5 } else { 1.0 })
            } else {
                let fan_in = shape[0] as f64;
                let damp = if name.ends_with("attn.out") || name.ends_with("fc2.weight") || name.starts_with("patch_unembed") {
                    0.5
                } else {
                    1.0
                };
                Some(damp / fan_in.sqrt())
            };
            let data: Vec<f64> = match std {
                None => vec![1.0; n],
                Some(0.0) => vec![0.0; n],
                Some(s) => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        s * z
                    })
                    .collect(),
            };
            params.push(Parameter::new(name, Tensor::new(&shape, data)?));
        }
        Ok(Self {
            index: build_index(&config),
            config,
            params,
        })
    }

    /// Rebuild from tensors in layout order, validating names and shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::Usage(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.len());
        for ((name, shape), (got_name, t)) in layout.into_iter().zip(tensors) {
            if name != got_name || shape != t.shape() {
                return Err(Error::Dimension {
                    op: "load weights",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            params.push(Parameter::new(name, t));
        }
        Ok(Self {
            index: build_index(&config),
            config,
            params,
        })
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.position(name)
            .map(|i| &self.params[i])
            .ok_or_else(|| Error::Lookup(format!("no parameter named `{name}`")))
    }

    /// Key/value layer paths in stable order: key then value per block.
    pub fn key_value_paths(&self) -> Vec<String> {
        key_value_paths(&self.config)
    }

    /// Parameter positions of the key/value matrices, aligned with [`Self::key_value_paths`].
    pub fn key_value_positions(&self) -> Vec<usize> {
        self.index.blocks.iter().flat_map(|b| [b.key, b.value]).collect()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }

    pub fn total_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// True when every parameter value is bit-identical to `other`'s.
    pub fn bit_equal(&self, other: &ModelWeights) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

pub fn key_value_paths(config: &ModelConfig) -> Vec<String> {
    (0..config.blocks).flat_map(|b| [key_path(b), value_path(b)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_matches_layout_names() {
        let w = ModelWeights::init(ModelConfig::default(), 1).unwrap();
        let b = &w.index.blocks[2];
        assert_eq!(w.params[b.key].name, "block2.cross_attn.key");
        assert_eq!(w.params[b.value].name, "block2.cross_attn.value");
        assert_eq!(w.params[b.fc2_bias].name, "block2.mlp.fc2.bias");
        assert_eq!(w.params[w.index.unpatch_bias].name, "patch_unembed.bias");
        assert_eq!(w.params.len(), w.index.unpatch_bias + 1);
    }

    #[test]
    fn key_value_paths_are_stable() {
        let w = ModelWeights::init(ModelConfig::default(), 1).unwrap();
        let paths = w.key_value_paths();
        assert_eq!(paths.len(), 2 * w.config.blocks);
        assert_eq!(paths[0], "block0.cross_attn.key");
        assert_eq!(paths[7], "block3.cross_attn.value");
        for (p, i) in paths.iter().zip(w.key_value_positions()) {
            assert_eq!(&w.params[i].name, p);
            assert_eq!(w.params[i].value.shape(), &[32, 32]);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelWeights::init(ModelConfig::default(), 4).unwrap();
        let b = ModelWeights::init(ModelConfig::default(), 4).unwrap();
        let c = ModelWeights::init(ModelConfig::default(), 5).unwrap();
        assert!(a.bit_equal(&b));
        assert!(!a.bit_equal(&c));
    }
}
