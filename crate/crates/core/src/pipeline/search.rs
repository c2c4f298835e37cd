use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::template_for;
use super::{BriefConfig, BriefData, PipelineError, Stream};
use crate::evaluator::TrainEvaluator;
use crate::graph::LayerGraph;
use crate::ncs::{run_search_timed, IterationRecord, SearchConfig};
use crate::nn::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSearch {
    pub stream: Stream,
    pub graph: LayerGraph,
    pub log: Vec<IterationRecord>,
    /// Reward of the best logged episode.
    pub best_reward: f64,
    /// Reward of the unmodified template under the first candidate's seed.
    pub baseline_reward: f64,
}

/// Connection search over a stream's template encoder, rewarded by short
/// training runs on the subjects in `idx` (split 90/10 internally).
///
/// With `k_max == 0` no connection can be added, so the template is
/// evaluated once and the log holds that single evaluation.
pub fn optimize_encoder(
    stream: Stream,
    data: &BriefData,
    idx: &[usize],
    cfg: &BriefConfig,
    search: &SearchConfig,
    clock: &mut dyn FnMut() -> u64,
) -> Result<EncoderSearch, PipelineError> {
    let ds = data.stream_dataset(stream, idx).ok_or(PipelineError::Config("stream not present in the data"))?;
    let template = template_for(stream, ds.shape, cfg)?;
    let tcfg = TrainConfig { epochs: search.eval_epochs, seed: search.seed, ..cfg.training.clone() };
    let mut evaluator = TrainEvaluator::new(&ds, tcfg);
    let baseline_reward = evaluator.score(&template, 0)?;
    if search.k_max == 0 {
        let record = IterationRecord {
            iter: 0,
            epsilon: crate::ncs::epsilon_at(&search.schedule, 0),
            starts: vec![template.input_id()],
            targets: Vec::new(),
            types: Vec::new(),
            reward: baseline_reward,
            wall_ms: 0,
        };
        return Ok(EncoderSearch { stream, graph: template, log: vec![record], best_reward: baseline_reward, baseline_reward });
    }
    let result = run_search_timed(&template, &mut evaluator, search, clock)?;
    let best_reward = result.best.as_ref().and_then(|e| e.reward).unwrap_or(baseline_reward);
    Ok(EncoderSearch { stream, graph: result.best_graph.unwrap_or(template), log: result.log, best_reward, baseline_reward })
}
