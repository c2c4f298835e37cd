//! Trained-model checkpoints: named parameter tensors with their shapes,
//! stored as JSON alongside the configuration and the data split.

use serde::{Deserialize, Serialize};

use brief_core::pipeline::{BriefConfig, BriefModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: BriefConfig,
    pub model: BriefModel,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}
