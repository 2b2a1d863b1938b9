//! Reverse-mode autodiff and the sequence models trained on transaction windows.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;

use thiserror::Error;

use crate::data::Field;

pub use checkpoint::Checkpoint;
pub use graph::{Graph, Gradients, Tensor, Var};
pub use model::{Architecture, Bound, ConvSpec, ModelConfig, ParamStore, SequenceModel};
pub use optim::{Adam, Schedule};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{} token {index} outside vocabulary of size {size}", field.name())]
    TokenRange { field: Field, index: usize, size: usize },
    #[error("transaction lacks field {}", .0.name())]
    MissingField(Field),
    #[error("window of {len} transactions is shorter than the minimum {min}")]
    SequenceTooShort { len: usize, min: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFinite(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}
