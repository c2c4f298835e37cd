use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::EvalError;
use crate::graph::LayerGraph;
use crate::ncs::Evaluator;
use crate::nn::{fit, Dataset, Network, TrainConfig};
use crate::rng::{derive_indexed, derive_seed, seeded};

/// Stratified split: `holdout` of each class goes to the second list.
pub fn split_indices(labels: &[usize], holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seeded(derive_seed(seed, "split"));
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = libm::round(idx.len() as f64 * holdout) as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Instantiates `graph` from `seed`, trains it on `train` and returns the
/// final-epoch accuracy on `valid`.
pub fn train_reward(graph: &LayerGraph, data: &Dataset, train: &[usize], valid: &[usize], cfg: &TrainConfig) -> Result<f64, EvalError> {
    let mut net = Network::new(graph.clone(), &mut seeded(derive_seed(cfg.seed, "init")))?;
    Ok(fit(&mut net, data, train, valid, cfg)?.accuracy)
}

/// Training-based reward with a fixed 90/10 split and per-candidate seeds.
#[derive(Debug, Clone)]
pub struct TrainEvaluator<'a> {
    data: &'a Dataset,
    train: Vec<usize>,
    valid: Vec<usize>,
    config: TrainConfig,
}

impl<'a> TrainEvaluator<'a> {
    pub const HOLDOUT: f64 = 0.1;

    /// `config.epochs` is the short evaluation budget; `config.seed` is the
    /// search seed from which split and candidate seeds derive.
    pub fn new(data: &'a Dataset, config: TrainConfig) -> Self {
        let (train, valid) = split_indices(&data.labels, Self::HOLDOUT, config.seed);
        TrainEvaluator { data, train, valid, config }
    }

    pub fn config_for(&self, iteration: usize) -> TrainConfig {
        TrainConfig { seed: derive_indexed(self.config.seed, "candidate", iteration as u64), ..self.config.clone() }
    }

    pub fn score(&self, graph: &LayerGraph, iteration: usize) -> Result<f64, EvalError> {
        train_reward(graph, self.data, &self.train, &self.valid, &self.config_for(iteration))
    }
}

impl Evaluator for TrainEvaluator<'_> {
    fn evaluate(&mut self, graph: &LayerGraph, iteration: usize) -> Result<f64, alloc::string::String> {
        self.score(graph, iteration).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 60)).collect();
        let (tr, te) = split_indices(&labels, 0.1, 3);
        assert_eq!(te.len(), 10);
        assert_eq!(te.iter().filter(|&&i| labels[i] == 1).count(), 4);
        assert_eq!(tr.len() + te.len(), 100);
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(split_indices(&labels, 0.1, 3), (tr, te));
    }
}
