//! Rewards for connection search and synthetic two-class corpora.

mod surrogate;
mod synthetic;
mod training;

pub use surrogate::{surrogate_reward, SurrogateEvaluator, SurrogateSpec};
pub use synthetic::{gen_synthetic, Subject, SyntheticConfig};
pub use training::{split_indices, train_reward, TrainEvaluator};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid synthetic config: {0}")]
    InvalidSynthetic(&'static str),
    #[error("invalid surrogate spec: {0}")]
    InvalidSurrogate(&'static str),
    #[error("cannot instantiate candidate: {0}")]
    InstantiationFailure(#[from] crate::nn::NnError),
}
