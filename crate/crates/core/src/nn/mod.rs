//! A small double-precision network engine over [`LayerGraph`]s.
//!
//! [`LayerGraph`]: crate::graph::LayerGraph

pub mod fusion;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod ops;
pub mod optim;
pub mod param;
pub mod templates;
pub mod tensor;
pub mod train;

pub use fusion::{FusionCache, FusionConfig, FusionHead};
pub use network::{Grads, Mode, Network, Trace};
pub use optim::{Adam, AdamConfig};
pub use param::Param;
pub use tensor::Tensor;
pub use train::{accuracy, fit, positive_scores, train, Dataset, Labeled, StepDecay, TrainConfig, TrainReport, Trainable};

use crate::graph::{GraphError, NodeId, Shape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("node {node}: expected input shape {expected}, found {found}")]
    ShapeMismatch { node: NodeId, expected: Shape, found: Shape },
    #[error("fusion tokens: expected {expected}, found {found}")]
    TokenDimMismatch { expected: Shape, found: Shape },
    #[error("invalid fusion head configuration (heads must divide the model dim, classes >= 2)")]
    InvalidFusionConfig,
    #[error("node {node} produced a non-finite activation")]
    NonFiniteActivation { node: NodeId },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[cfg(test)]
mod tests;
