//! Embedding analysis: clustering, partition agreement, stability runs and
//! 2-D projections.

pub mod export;
pub mod kmeans;
pub mod partition;
pub mod stability;
pub mod tsne;

use thiserror::Error;

pub use kmeans::{kmeans, KMeansResult};
pub use partition::{ami, entropy, expected_mi, mutual_information, Partition};
pub use stability::{random_partition_control, stability_protocol, StabilityConfig, StabilityReport};
pub use tsne::{tsne, TsneConfig, TsneResult};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("partitions have different sizes: {left} and {right}")]
    Length { left: usize, right: usize },
    #[error("perplexity {perplexity} infeasible for {n} points (needs 1 <= perplexity < (n - 1) / 3)")]
    Perplexity { perplexity: f64, n: usize },
    #[error("{0}")]
    Params(String),
}
