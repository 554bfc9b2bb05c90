//! Procedural concepts, captions, rendering and the image oracle.

mod caption;
mod concept;
mod export;
mod oracle;
mod render;
pub mod vocab;

pub use caption::{
    caption_for, caption_with_context, concept_prompt, context_index, grammar_cardinality,
    make_calibration_prompts, Caption, CONTEXT_PHRASES,
};
pub use concept::{
    all_specs, held_in_specs, is_novel_triple, novel_specs, Color, ConceptSpec, Shape, Texture,
    CANONICAL_SCALE, MAX_SCALE, MIN_SCALE,
};
pub use export::{
    decode_image, encode_image, export_corpus, load_corpus, ppm_bytes, ppm_grid, write_ppm, IndexEntry,
    HEADER_LEN, IMAGE_MAGIC,
};
pub use oracle::{classify_image, match_spec, Classification, NOISE_CONFIDENCE_CEILING, SEARCH_SHIFT};
pub use render::{
    jitter_for, mirror_horizontal, pixel, rasterize, render_concept, shape_contains, shape_mask, ImageSample,
    CHANNELS, IMAGE_SIZE, MAX_JITTER, PIXELS,
};

pub use vocab::{is_special, special_token, token_id, CAPTION_LEN, SPECIAL_SLOTS, VOCAB_SIZE};

/// Pretraining corpus: every held-in spec rendered with `renders_per_spec` jitter seeds.
pub fn pretraining_corpus(renders_per_spec: usize, seed: u64) -> Vec<ImageSample> {
    held_in_specs()
        .iter()
        .flat_map(|spec| {
            (0..renders_per_spec as u64)
                .map(move |k| render_concept(spec, crate::numerics::derive_seed(seed, &[spec.id() as u64, k])))
        })
        .collect()
}
