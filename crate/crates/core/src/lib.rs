//! Day-level nowcasting from long per-day transaction streams.
//!
//! The crate covers the whole experimental pipeline: a validated data model
//! for per-day transaction logs, a synthetic generator with planted signals,
//! contiguous window sampling, handcrafted day features with a boosted-tree
//! baseline, token embeddings with SIF day vectors, a small reverse-mode
//! autodiff engine with CNN / IndRNN / LSTM sequence models, the training and
//! inference protocols, and an embedding analysis suite (k-means, AMI,
//! stability runs, t-SNE).

pub mod analysis;
pub mod baseline;
pub mod cli;
pub mod data;
pub mod digest;
pub mod embed;
pub mod features;
pub mod gbt;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod train;

pub use data::{Dataset, DayRecord, Label, TaskKind, Transaction, VocabSizes};
