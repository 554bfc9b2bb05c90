//! Fidelity, forgetting, overlap and parameter metrics, the manifest runner
//! and report emission.

mod fidelity;
mod forgetting;
mod manifest;
mod params;
mod report;
mod similarity;
pub mod svg;

pub use fidelity::{
    composition_hits, concept_fidelity, CompositionHits, HIT_THRESHOLD, fidelity_sample_seed, record_fidelity, score_images, token_samples,
    FidelityScore,
};
pub use forgetting::{forgetting_curve, ForgettingCurve, ForgettingPoint};
pub use manifest::{
    default_concepts, run_manifest, EvalConfig, RunLayout, RunManifest, MANIFEST_FILE, REGISTRY_SUBDIR, STAGES_SUBDIR,
};
pub use params::{parameter_update_fraction, params_csv, ParameterFractions};
pub use report::{
    build_report, write_report, AlignmentProxy, ConceptMetrics, MaskStats, MetricsReport, Provenance, ReportImages,
    Scored, REPORT_FILES,
};
pub use similarity::{
    chain_trend, edit_chain, matrix_csv, prompt_similarity_matrix, spearman, ChainTrend, SPEARMAN_CRITICAL_N11,
};
