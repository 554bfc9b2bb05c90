//! Learning concepts one at a time: masked updates of concept neurons and a
//! special token, the anchoring regularizer and the concept registry.

pub mod config;
pub mod objective;
pub mod optim;
pub mod registry;
pub mod train;

pub use config::{MaskStrategy, TrainConfig};
pub use objective::{
    reg_loss, reg_loss_grad, reg_mask, total_loss, total_loss_and_grad, LossTerms, LossWeights, ObjectiveBatch,
    PersonalizationObjective, RegTerm,
};
pub use optim::MaskedAdam;
pub use registry::{
    CheckpointRef, ConceptRecord, ConceptRegistry, MaskCounts, CONCEPTS_DIR, CURRENT_DIR, MAX_CONCEPTS, REGISTRY_FILE,
    W0_DIR,
};
pub use train::{
    begin_concept, concept_training_set, finish_concept, isolation_violations, prior_batch, random_mask_like,
    train_concept, ConceptSession, PriorBatch, SessionMasks, LOSS_CSV,
};
