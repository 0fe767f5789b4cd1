//! Dense networks with hand-written reverse mode, Adam, and a bit-exact
//! parameter checkpoint format.

use thiserror::Error;

mod adam;
mod checkpoint;
mod mlp;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use mlp::{BatchCache, ForwardCache, Mlp};

#[derive(Debug, Error)]
pub enum NeuroError {
    #[error("expected input of length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("architecture mismatch: {0:?} vs {1:?}")]
    Architecture(Vec<usize>, Vec<usize>),
    #[error("a network needs at least an input and an output size, got {0:?}")]
    TooFewLayers(Vec<usize>),
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    #[error("checkpoint is malformed: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
