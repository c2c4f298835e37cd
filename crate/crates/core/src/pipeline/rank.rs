use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{BriefData, BriefModel, Stream};
use crate::nn::templates::attention_node;
use crate::nn::{Mode, NnError};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRanking {
    pub stream: Stream,
    /// Mean attention-pool weight per region (index 0 is region 1).
    pub weights: Vec<f64>,
    /// 1-based regions, most attended first; ties keep the lower region first.
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamScore {
    pub stream: Stream,
    /// Mean fusion attention received by the stream's token.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rankings {
    pub regions: Vec<RegionRanking>,
    /// Sorted by descending mass; masses sum to 1.
    pub streams: Vec<StreamScore>,
}

impl Rankings {
    pub fn region_ranking(&self, stream: Stream) -> Option<&RegionRanking> {
        self.regions.iter().find(|r| r.stream == stream)
    }
}

/// Descending order of `weights` as 1-based indices.
pub fn rank_desc(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|a, b| weights[*b].total_cmp(&weights[*a]).then(a.cmp(b)));
    idx.into_iter().map(|i| i + 1).collect()
}

/// Averages attention over the subjects in `idx` (evaluation mode).
pub fn rank_importance(model: &BriefModel, data: &BriefData, idx: &[usize]) -> Result<Rankings, NnError> {
    if idx.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let tr = model.forward(data, idx, Mode::Eval, &mut seeded(0))?;
    let mut regions = Vec::new();
    for ((stream, net), trace) in model.encoders.iter().zip(&tr.encoders) {
        if !stream.positions_are_regions() {
            continue;
        }
        let Some(node) = attention_node(net.graph()) else { continue };
        let w = trace.attention_weights(node).expect("attention node evaluated");
        let len = w.len() / idx.len();
        let mut mean = vec![0.0; len];
        for row in w.chunks_exact(len) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / idx.len() as f64;
            }
        }
        regions.push(RegionRanking { stream: *stream, ranking: rank_desc(&mean), weights: mean });
    }
    let n = model.encoders.len();
    let mut mass = vec![0.0; n];
    for b in 0..idx.len() {
        for (m, v) in mass.iter_mut().zip(tr.fusion.attention_received(b)) {
            *m += v / idx.len() as f64;
        }
    }
    let mut streams: Vec<StreamScore> = model.encoders.iter().zip(mass).map(|((s, _), m)| StreamScore { stream: *s, mass: m }).collect();
    streams.sort_by(|a, b| b.mass.total_cmp(&a.mass).then(a.stream.cmp(&b.stream)));
    Ok(Rankings { regions, streams })
}
