//! Deterministic dense tensor operations with hand-written backward passes.

mod adam;
mod gradcheck;
pub mod ops;
mod rng;
mod tensor;

pub use adam::{Adam, AdamSettings};
pub use gradcheck::{check_gradients, EntryError, GradCheckConfig, GradCheckReport, GradObjective, ParamCheck};
pub use ops::{
    layer_norm, layer_norm_backward, matmul, matmul_backward, pointwise_gelu, pointwise_gelu_backward,
    softmax_rows, softmax_rows_backward, LayerNormCache,
};
pub use rng::{derive_seed, standard_normals, RngState};
pub use tensor::{Parameter, Tensor};
