//! Toy text-conditioned denoiser, its noise schedule, training loss,
//! sampler, pretraining loop and checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod pretrain;
pub mod sampler;
pub mod schedule;
pub mod weights;

pub use checkpoint::{
    checkpoint_hash, load_checkpoint, load_tensors, read_manifest, save_checkpoint, save_tensors, sha256_hex,
    CheckpointManifest, Dtype, TensorEntry,
};
pub use config::{ModelConfig, LN_EPS};
pub use loss::{diffusion_loss, diffusion_loss_and_grad, draw_noise, weighted_residual, Example, NoiseDraw};
pub use model::{
    attention_maps, backward_patches, cross_attention, denoise_forward, encode_text, encode_tokens, forward_patches,
    patchify, transpose, unpatchify, ForwardCache, TextEmbedding,
};
pub use pretrain::{
    attribute_accuracy, check_corpus, held_in_prompts, pretrain, write_curve_csv, AttributeCheck, CurvePoint, PretrainConfig,
    PretrainRun,
};
pub use sampler::{sample, sample_many};
pub use schedule::NoiseSchedule;
pub use weights::{key_path, key_value_paths, parameter_layout, value_path, BlockIndex, ModelWeights, WeightIndex};
