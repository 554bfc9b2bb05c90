pub mod cli;
pub mod continual;
pub mod data;
pub mod diffusion;
pub mod eval;
pub mod error;
pub mod numerics;
pub mod select;

pub use error::{Error, Result};
