//! Importance scoring of key/value weights and the mask algebra built on it.

pub mod mask;
pub mod neurons;
pub mod scores;

pub use mask::{load_mask_set, save_mask_set, MaskEntry, MaskManifest, MaskSet, NeuronMask, MASKS_BIN, MASKS_JSON};
pub use neurons::{
    base_mask, caption_mask, concept_mask, general_mask, mask_miou, overlap_csv, overlap_fraction_curve,
    write_overlap_csv,
};
pub use scores::{column_norms, importance_scores, select_mask, top_k_count, ImportanceScores, SelectionAxis, SelectionConfig};
