use serde::{Deserialize, Serialize};

use crate::data::vocab::{CAPTION_LEN, VOCAB_SIZE};
use crate::error::{Error, Result};

/// Dimensions of the toy text-conditioned denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    /// Latent width `l` of the patch tokens.
    pub width: usize,
    /// Text embedding width `d`.
    pub text_dim: usize,
    /// Query/key width `d'`.
    pub key_dim: usize,
    pub value_dim: usize,
    pub mlp_hidden: usize,
    pub blocks: usize,
    /// Diffusion steps `T`.
    pub steps: usize,
    pub vocab: usize,
    /// Caption length `s`.
    pub text_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            channels: 3,
            patch_size: 4,
            width: 64,
            text_dim: 32,
            key_dim: 32,
            value_dim: 32,
            mlp_hidden: 128,
            blocks: 4,
            steps: 100,
            vocab: VOCAB_SIZE,
            text_len: CAPTION_LEN,
        }
    }
}

/// Layer-norm epsilon shared by every normalization in the model.
pub const LN_EPS: f64 = 1e-5;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_size,
            self.channels,
            self.patch_size,
            self.width,
            self.text_dim,
            self.key_dim,
            self.value_dim,
            self.mlp_hidden,
            self.blocks,
            self.steps,
            self.vocab,
            self.text_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Usage(format!("all model dimensions must be positive: {self:?}")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Usage(format!(
                "patch size {} does not divide image size {}",
                self.patch_size, self.image_size
            )));
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn image_len(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_size, self.image_size, self.channels]
    }

    /// Number of scalars in the key and value matrices of all blocks.
    pub fn key_value_params(&self) -> usize {
        self.blocks * self.text_dim * (self.key_dim + self.value_dim)
    }
}
