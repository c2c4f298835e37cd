//! Network connection search as a tabular Q-learning MDP.
//!
//! The state is the current source node, an action picks the next target node
//! among the base graph's candidate connections. One episode chains up to
//! `k_max` connections starting from a configured node; the expanded graph is
//! scored by an [`Evaluator`] and the score is propagated backwards through the
//! episode with Bellman updates.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{self, ConnectionSpec, ConnectionType, GraphError, LayerGraph, NodeId};
use crate::rng;

pub const INITIAL_Q: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("the graph has no candidate connections")]
    EmptyCandidateSet,
    #[error("candidate ({0}, {1}) listed twice")]
    DuplicateCandidate(NodeId, NodeId),
    #[error("node {0} has no candidate targets")]
    NoValidAction(NodeId),
    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("({0}, {1}) is not in the Q-table")]
    UnknownPair(NodeId, NodeId),
    #[error("episode has not been evaluated")]
    MissingReward,
    #[error("invalid search configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("evaluator failed at iteration {iteration}: {message}")]
    Evaluator { iteration: usize, message: String },
}

/// Action values for every candidate connection of the base graph.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    entries: BTreeMap<(NodeId, NodeId), f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub src: NodeId,
    pub dst: NodeId,
    pub q: f64,
}

/// Every candidate starts at 0.5.
pub fn init_qtable(candidates: &[(NodeId, NodeId)]) -> Result<QTable, SearchError> {
    if candidates.is_empty() {
        return Err(SearchError::EmptyCandidateSet);
    }
    let mut entries = BTreeMap::new();
    for &(s, d) in candidates {
        if entries.insert((s, d), INITIAL_Q).is_some() {
            return Err(SearchError::DuplicateCandidate(s, d));
        }
    }
    Ok(QTable { entries })
}

impl QTable {
    pub fn get(&self, src: NodeId, dst: NodeId) -> Option<f64> {
        self.entries.get(&(src, dst)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Targets reachable from `src`, ascending by id.
    pub fn targets(&self, src: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.entries.range((src, NodeId::MIN)..=(src, NodeId::MAX)).map(|(&(_, d), &q)| (d, q))
    }

    pub fn max_from(&self, src: NodeId) -> Option<f64> {
        self.targets(src).map(|(_, q)| q).reduce(f64::max)
    }

    /// Highest-valued target of `src`; ties go to the lowest id.
    pub fn argmax(&self, src: NodeId) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64)> = None;
        for (d, q) in self.targets(src) {
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((d, q));
            }
        }
        best.map(|(d, _)| d)
    }

    pub fn iter(&self) -> impl Iterator<Item = QEntry> + '_ {
        self.entries.iter().map(|(&(src, dst), &q)| QEntry { src, dst, q })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = QEntry>) -> Self {
        QTable { entries: entries.into_iter().map(|e| ((e.src, e.dst), e.q)).collect() }
    }

    fn slot(&mut self, src: NodeId, dst: NodeId) -> Result<&mut f64, SearchError> {
        self.entries.get_mut(&(src, dst)).ok_or(SearchError::UnknownPair(src, dst))
    }
}

/// Piecewise-constant exploration rate: `(epsilon, iterations)` stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, usize)>", into = "Vec<(f64, usize)>")]
pub struct EpsilonSchedule {
    stages: Vec<(f64, usize)>,
}

impl EpsilonSchedule {
    pub fn new(stages: Vec<(f64, usize)>) -> Result<Self, SearchError> {
        if stages.is_empty() {
            return Err(SearchError::InvalidConfig("epsilon schedule is empty"));
        }
        if stages.iter().any(|(e, _)| !(0.0..=1.0).contains(e)) {
            return Err(SearchError::InvalidConfig("epsilon outside [0, 1]"));
        }
        if stages.windows(2).any(|w| w[1].0 >= w[0].0) {
            return Err(SearchError::InvalidConfig("epsilon stages must strictly decrease"));
        }
        Ok(EpsilonSchedule { stages })
    }

    /// 1.0 for 100 iterations, then 0.9 down to 0.1 over 83 more.
    pub fn standard() -> Self {
        EpsilonSchedule { stages: alloc::vec![(1.0, 100), (0.9, 7), (0.8, 7), (0.7, 7), (0.6, 10), (0.5, 10), (0.4, 10), (0.3, 10), (0.2, 10), (0.1, 12),] }
    }

    pub fn stages(&self) -> &[(f64, usize)] {
        &self.stages
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|(_, n)| n).sum()
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self::standard()
    }
}

impl TryFrom<Vec<(f64, usize)>> for EpsilonSchedule {
    type Error = SearchError;
    fn try_from(v: Vec<(f64, usize)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EpsilonSchedule> for Vec<(f64, usize)> {
    fn from(s: EpsilonSchedule) -> Self {
        s.stages
    }
}

/// Iterations past the end of the schedule keep the final epsilon.
pub fn epsilon_at(schedule: &EpsilonSchedule, iteration: usize) -> f64 {
    let mut end = 0;
    for &(eps, n) in &schedule.stages {
        end += n;
        if iteration < end {
            return eps;
        }
    }
    schedule.stages.last().map(|s| s.0).expect("schedule is non-empty")
}

/// One rollout: sources `S`, targets `U`, connection types `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    #[serde(rename = "S")]
    pub starts: Vec<NodeId>,
    #[serde(rename = "U")]
    pub targets: Vec<NodeId>,
    #[serde(rename = "Y")]
    pub types: Vec<ConnectionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

impl Episode {
    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.starts.iter().copied().zip(self.targets.iter().copied())
    }

    pub fn connections(&self) -> Vec<ConnectionSpec> {
        self.pairs().zip(self.types.iter()).map(|((src, dst), &ctype)| ConnectionSpec { src, dst, ctype }).collect()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Same connections, ignoring the reward.
    pub fn same_actions(&self, other: &Episode) -> bool {
        self.starts == other.starts && self.targets == other.targets && self.types == other.types
    }
}

/// Episode sampling options that stay fixed over a search.
#[derive(Debug, Clone, Copy)]
pub struct Rollout {
    pub start: NodeId,
    pub terminal: NodeId,
    pub k_max: usize,
    /// Draw the connection type independently of the explore/exploit draw.
    pub decoupled_type_draw: bool,
}

impl Rollout {
    pub fn for_graph(graph: &LayerGraph, k_max: usize) -> Self {
        Rollout { start: graph.input_id(), terminal: graph.fusion_index(), k_max, decoupled_type_draw: false }
    }
}

/// Sample one episode with epsilon-greedy target selection.
///
/// At each step a uniform draw `a` picks exploitation when `a > epsilon`
/// (argmax over the current source's targets, lowest id on ties) and a
/// uniform random target otherwise. The same draw sets the type: concatenate
/// when `a > 0.5`, residual otherwise, unless `decoupled_type_draw` is set.
/// The episode ends after `k_max` steps, on reaching the terminal node, or
/// when the current source has no targets left.
pub fn sample_episode<R: Rng + ?Sized>(qtable: &QTable, epsilon: f64, rollout: &Rollout, rng: &mut R) -> Result<Episode, SearchError> {
    let mut ep = Episode { starts: alloc::vec![rollout.start], targets: Vec::new(), types: Vec::new(), reward: None };
    for _ in 0..rollout.k_max {
        let src = *ep.starts.last().expect("starts is never empty");
        let targets: Vec<NodeId> = qtable.targets(src).map(|(d, _)| d).collect();
        if targets.is_empty() {
            if ep.targets.is_empty() {
                return Err(SearchError::NoValidAction(src));
            }
            break;
        }
        let a: f64 = rng.gen();
        let node = if a > epsilon { qtable.argmax(src).expect("targets is non-empty") } else { targets[rng.gen_range(0..targets.len())] };
        let type_draw = if rollout.decoupled_type_draw { rng.gen::<f64>() } else { a };
        let ctype = if type_draw > 0.5 { ConnectionType::Concatenate } else { ConnectionType::Residual };
        ep.targets.push(node);
        ep.types.push(ctype);
        if node == rollout.terminal {
            break;
        }
        ep.starts.push(node);
    }
    Ok(ep)
}

/// Bellman updates for one evaluated episode, applied from the terminal pair
/// backwards so every pair sees its successor's fresh value.
///
/// The terminal pair moves toward the episode reward; earlier pairs move
/// toward `r + gamma * max Q(next source, .)` with intermediate reward 0.
pub fn update_q(qtable: &mut QTable, episode: &Episode, alpha: f64, gamma: f64) -> Result<(), SearchError> {
    let reward = episode.reward.ok_or(SearchError::MissingReward)?;
    if !(0.0..=1.0).contains(&reward) || reward.is_nan() {
        return Err(SearchError::RewardOutOfRange(reward));
    }
    let pairs: Vec<(NodeId, NodeId)> = episode.pairs().collect();
    for &(s, d) in &pairs {
        qtable.get(s, d).ok_or(SearchError::UnknownPair(s, d))?;
    }
    let Some((&last, earlier)) = pairs.split_last() else {
        return Ok(());
    };
    let q = qtable.slot(last.0, last.1)?;
    *q = (1.0 - alpha) * *q + alpha * reward;
    const INTERMEDIATE_REWARD: f64 = 0.0;
    for &(s, d) in earlier.iter().rev() {
        // The next source is this pair's target.
        let next_max = qtable.max_from(d).unwrap_or(0.0);
        let q = qtable.slot(s, d)?;
        *q = (1.0 - alpha) * *q + alpha * (INTERMEDIATE_REWARD + gamma * next_max);
    }
    Ok(())
}

/// Fixed-capacity FIFO of evaluated episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    records: VecDeque<Episode>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { records: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.records.iter()
    }

    pub fn record(&mut self, episode: Episode) -> Result<(), SearchError> {
        if episode.reward.is_none() {
            return Err(SearchError::MissingReward);
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(episode);
        Ok(())
    }

    /// `n` records drawn uniformly without replacement (all of them if fewer).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Episode> {
        let n = n.min(self.records.len());
        rand::seq::index::sample(rng, self.records.len(), n).into_iter().map(|i| &self.records[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub k_max: usize,
    pub schedule: EpsilonSchedule,
    /// Defaults to the length of the schedule.
    pub iterations: Option<usize>,
    pub replay_capacity: usize,
    pub replay_samples_per_iter: usize,
    /// Training epochs per candidate for training-based evaluators.
    pub eval_epochs: usize,
    pub seed: u64,
    /// Defaults to the input node.
    pub start_node: Option<NodeId>,
    pub decoupled_type_draw: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            alpha: 0.01,
            gamma: 1.0,
            k_max: 3,
            schedule: EpsilonSchedule::standard(),
            iterations: None,
            replay_capacity: 128,
            replay_samples_per_iter: 8,
            eval_epochs: 10,
            seed: 0,
            start_node: None,
            decoupled_type_draw: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SearchError::InvalidConfig("alpha must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SearchError::InvalidConfig("gamma must lie in [0, 1]"));
        }
        if self.k_max == 0 {
            return Err(SearchError::InvalidConfig("k_max must be at least 1"));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or_else(|| self.schedule.total_iterations())
    }
}

/// Reward source for the search loop.
pub trait Evaluator {
    /// Score an expanded graph; must return a value in `[0, 1]`.
    fn evaluate(&mut self, graph: &LayerGraph, iteration: usize) -> Result<f64, String>;
}

impl<F: FnMut(&LayerGraph, usize) -> Result<f64, String>> Evaluator for F {
    fn evaluate(&mut self, graph: &LayerGraph, iteration: usize) -> Result<f64, String> {
        self(graph, iteration)
    }
}

/// Per-iteration search log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub epsilon: f64,
    #[serde(rename = "S")]
    pub starts: Vec<NodeId>,
    #[serde(rename = "U")]
    pub targets: Vec<NodeId>,
    #[serde(rename = "Y")]
    pub types: Vec<ConnectionType>,
    pub reward: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub qtable: QTable,
    pub best: Option<Episode>,
    pub best_graph: Option<LayerGraph>,
    pub log: Vec<IterationRecord>,
}

/// A search that stopped early, with everything logged up to the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct SearchFailure {
    pub error: SearchError,
    pub log: Vec<IterationRecord>,
}

/// Apply every connection of an episode to the base graph.
pub fn expand_graph(base: &LayerGraph, episode: &Episode) -> Result<LayerGraph, GraphError> {
    let mut g = base.clone();
    for spec in episode.connections() {
        g = graph::insert_connection(&g, spec)?;
    }
    Ok(g)
}

/// Run the search loop without wall-clock timing (all `wall_ms` are 0).
pub fn run_search<E: Evaluator + ?Sized>(graph: &LayerGraph, evaluator: &mut E, config: &SearchConfig) -> Result<SearchResult, SearchFailure> {
    run_search_timed(graph, evaluator, config, &mut || 0)
}

/// Run the search loop; `clock` returns milliseconds and is sampled around
/// each iteration.
pub fn run_search_timed<E: Evaluator + ?Sized>(
    graph: &LayerGraph,
    evaluator: &mut E,
    config: &SearchConfig,
    clock: &mut dyn FnMut() -> u64,
) -> Result<SearchResult, SearchFailure> {
    let mut log = Vec::new();
    let fail = |error: SearchError, log: Vec<IterationRecord>| SearchFailure { error, log };
    if let Err(e) = config.validate() {
        return Err(fail(e, log));
    }
    let candidates = graph::candidate_connections(graph);
    let mut qtable = match init_qtable(&candidates) {
        Ok(q) => q,
        Err(e) => return Err(fail(e, log)),
    };
    let rollout = Rollout {
        start: config.start_node.unwrap_or_else(|| graph.input_id()),
        terminal: graph.fusion_index(),
        k_max: config.k_max,
        decoupled_type_draw: config.decoupled_type_draw,
    };
    let mut rng = rng::seeded(rng::derive_seed(config.seed, "ncs"));
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut best: Option<(Episode, LayerGraph)> = None;

    for iter in 0..config.iterations() {
        let started = clock();
        let epsilon = epsilon_at(&config.schedule, iter);
        let step = (|| -> Result<(Episode, LayerGraph), SearchError> {
            let mut episode = sample_episode(&qtable, epsilon, &rollout, &mut rng)?;
            let expanded = expand_graph(graph, &episode)?;
            let reward = evaluator.evaluate(&expanded, iter).map_err(|message| SearchError::Evaluator { iteration: iter, message })?;
            if !(0.0..=1.0).contains(&reward) {
                return Err(SearchError::RewardOutOfRange(reward));
            }
            episode.reward = Some(reward);
            replay.record(episode.clone())?;
            update_q(&mut qtable, &episode, config.alpha, config.gamma)?;
            let replayed: Vec<Episode> = replay.sample(config.replay_samples_per_iter, &mut rng).into_iter().cloned().collect();
            for old in &replayed {
                update_q(&mut qtable, old, config.alpha, config.gamma)?;
            }
            Ok((episode, expanded))
        })();
        let (episode, expanded) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, log)),
        };
        let reward = episode.reward.expect("evaluated above");
        log.push(IterationRecord {
            iter,
            epsilon,
            starts: episode.starts.clone(),
            targets: episode.targets.clone(),
            types: episode.types.clone(),
            reward,
            wall_ms: clock().saturating_sub(started),
        });
        if best.as_ref().is_none_or(|(b, _)| reward > b.reward.expect("evaluated")) {
            best = Some((episode, expanded));
        }
    }
    let (best, best_graph) = match best {
        Some((e, g)) => (Some(e), Some(g)),
        None => (None, None),
    };
    Ok(SearchResult { qtable, best, best_graph, log })
}

/// Distinct connection sets appearing in the log, for diagnostics.
pub fn distinct_episodes(log: &[IterationRecord]) -> usize {
    log.iter().map(|r| (r.starts.clone(), r.targets.clone(), r.types.clone())).collect::<BTreeSet<_>>().len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Attrs, LayerKind, NodeSpec, Shape};
    use alloc::vec;

    fn chain6() -> LayerGraph {
        let mut nodes = vec![NodeSpec::new(1, LayerKind::Input, Attrs::shape(Shape::Flat(4)))];
        for id in 2..6 {
            nodes.push(NodeSpec::new(id, LayerKind::Dense, Attrs::units(4)));
        }
        nodes.push(NodeSpec::new(6, LayerKind::Output, Attrs::default()));
        build_graph(nodes, (1..6).map(|i| (i, i + 1)).collect(), 6).unwrap()
    }

    fn episode(starts: &[NodeId], targets: &[NodeId], reward: f64) -> Episode {
        Episode { starts: starts.to_vec(), targets: targets.to_vec(), types: vec![ConnectionType::Residual; targets.len()], reward: Some(reward) }
    }

    #[test]
    fn init_sets_half() {
        let q = init_qtable(&[(1, 3), (1, 4), (2, 4)]).unwrap();
        assert!(q.iter().all(|e| e.q == 0.5));
        assert_eq!(init_qtable(&[]).unwrap_err(), SearchError::EmptyCandidateSet);
        assert_eq!(init_qtable(&[(1, 3), (1, 3)]).unwrap_err(), SearchError::DuplicateCandidate(1, 3));
    }

    #[test]
    fn schedule_lookup() {
        let s = EpsilonSchedule::standard();
        assert_eq!(epsilon_at(&s, 0), 1.0);
        assert_eq!(epsilon_at(&s, 99), 1.0);
        assert_eq!(epsilon_at(&s, 100), 0.9);
        assert_eq!(epsilon_at(&s, 1_000_000), 0.1);
        assert_eq!(s.total_iterations(), 183);
        assert!(EpsilonSchedule::new(vec![(0.5, 3), (0.5, 3)]).is_err());
        assert!(EpsilonSchedule::new(vec![(1.5, 3)]).is_err());
    }

    #[test]
    fn terminal_update_matches_closed_form() {
        let mut q = init_qtable(&[(1, 6)]).unwrap();
        update_q(&mut q, &episode(&[1], &[6], 0.9), 0.01, 1.0).unwrap();
        assert!((q.get(1, 6).unwrap() - 0.504).abs() < 1e-12);

        let mut q = init_qtable(&[(1, 6)]).unwrap();
        update_q(&mut q, &episode(&[1], &[6], 1.0), 1.0, 1.0).unwrap();
        assert_eq!(q.get(1, 6).unwrap(), 1.0);
    }

    #[test]
    fn bellman_update_uses_successor_max() {
        let mut q = QTable::from_entries([QEntry { src: 1, dst: 3, q: 0.5 }, QEntry { src: 3, dst: 5, q: 0.2 }, QEntry { src: 3, dst: 6, q: 0.6 }]);
        update_q(&mut q, &episode(&[1, 3], &[3, 5], 0.0), 0.01, 1.0).unwrap();
        assert!((q.get(3, 5).unwrap() - 0.198).abs() < 1e-12);
        // max Q(3, .) = 0.6, so 0.99 * 0.5 + 0.01 * 0.6.
        assert!((q.get(1, 3).unwrap() - 0.501).abs() < 1e-12);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let mut q = init_qtable(&[(1, 3)]).unwrap();
        assert_eq!(update_q(&mut q, &episode(&[1], &[3], 1.5), 0.1, 1.0), Err(SearchError::RewardOutOfRange(1.5)));
        assert_eq!(update_q(&mut q, &episode(&[1], &[4], 0.5), 0.1, 1.0), Err(SearchError::UnknownPair(1, 4)));
        let mut ep = episode(&[1], &[3], 0.5);
        ep.reward = None;
        assert_eq!(update_q(&mut q, &ep, 0.1, 1.0), Err(SearchError::MissingReward));
    }

    #[test]
    fn greedy_episode_is_deterministic() {
        let g = chain6();
        let mut q = init_qtable(&graph::candidate_connections(&g)).unwrap();
        *q.slot(1, 4).unwrap() = 0.9;
        *q.slot(4, 6).unwrap() = 0.8;
        let rollout = Rollout::for_graph(&g, 3);
        let a = sample_episode(&q, 0.0, &rollout, &mut rng::seeded(1)).unwrap();
        let b = sample_episode(&q, 0.0, &rollout, &mut rng::seeded(1)).unwrap();
        let c = sample_episode(&q, 0.0, &rollout, &mut rng::seeded(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.starts, vec![1, 4]);
        assert_eq!(a.targets, vec![4, 6]);
        assert_eq!((a.starts.clone(), a.targets.clone()), (c.starts, c.targets));
    }

    #[test]
    fn exploration_stays_within_candidates() {
        let g = chain6();
        let q = init_qtable(&graph::candidate_connections(&g)).unwrap();
        let rollout = Rollout::for_graph(&g, 3);
        let mut r = rng::seeded(5);
        for _ in 0..1000 {
            let ep = sample_episode(&q, 1.0, &rollout, &mut r).unwrap();
            assert!(ep.len() <= 3);
            for (s, d) in ep.pairs() {
                assert!(q.get(s, d).is_some());
            }
            if ep.targets.last() == Some(&6) {
                assert_eq!(ep.starts.len(), ep.targets.len());
            }
        }
    }

    /// An Rng whose every f64 draw is the same constant.
    struct Fixed(u64);
    impl rand::RngCore for Fixed {
        fn next_u32(&mut self) -> u32 {
            (self.0 >> 32) as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            for (i, b) in dest.iter_mut().enumerate() {
                *b = self.0.to_le_bytes()[i % 8];
            }
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
            self.fill_bytes(dest);
            Ok(())
        }
    }

    #[test]
    fn draw_above_half_on_exploit_step_is_concat() {
        let g = chain6();
        let q = init_qtable(&graph::candidate_connections(&g)).unwrap();
        // rand maps a u64 to [0, 1) via its top 53 bits.
        let seven_tenths = ((0.7f64 * (1u64 << 53) as f64) as u64) << 11;
        let mut r = Fixed(seven_tenths);
        let ep = sample_episode(&q, 0.1, &Rollout::for_graph(&g, 1), &mut r).unwrap();
        assert_eq!(ep.types, vec![ConnectionType::Concatenate]);
        assert_eq!(ep.targets, vec![3]);
        let three_tenths = ((0.3f64 * (1u64 << 53) as f64) as u64) << 11;
        let ep = sample_episode(&q, 0.1, &Rollout::for_graph(&g, 1), &mut Fixed(three_tenths)).unwrap();
        assert_eq!(ep.types, vec![ConnectionType::Residual]);
    }

    #[test]
    fn dead_end_start_is_an_error() {
        let q = init_qtable(&[(1, 3)]).unwrap();
        let rollout = Rollout { start: 5, terminal: 6, k_max: 2, decoupled_type_draw: false };
        assert_eq!(sample_episode(&q, 0.5, &rollout, &mut rng::seeded(0)), Err(SearchError::NoValidAction(5)));
    }

    #[test]
    fn replay_is_fifo_and_samples_members() {
        let mut buf = ReplayBuffer::new(2);
        for r in [0.1, 0.2, 0.3] {
            buf.record(episode(&[1], &[3], r)).unwrap();
        }
        let rewards: Vec<f64> = buf.iter().map(|e| e.reward.unwrap()).collect();
        assert_eq!(rewards, vec![0.2, 0.3]);
        assert_eq!(buf.sample(5, &mut rng::seeded(0)).len(), 2);
        let mut unevaluated = episode(&[1], &[3], 0.0);
        unevaluated.reward = None;
        assert_eq!(buf.record(unevaluated), Err(SearchError::MissingReward));
    }

    #[test]
    fn zero_iterations_returns_initial_table() {
        let g = chain6();
        let cfg = SearchConfig { iterations: Some(0), ..SearchConfig::default() };
        let mut eval = |_: &LayerGraph, _: usize| Ok(0.5);
        let res = run_search(&g, &mut eval, &cfg).unwrap();
        assert!(res.best.is_none());
        assert!(res.log.is_empty());
        assert!(res.qtable.iter().all(|e| e.q == 0.5));
    }

    #[test]
    fn evaluator_failure_keeps_partial_log() {
        let g = chain6();
        let cfg = SearchConfig { iterations: Some(10), ..SearchConfig::default() };
        let mut eval = |_: &LayerGraph, it: usize| if it == 4 { Err("boom".into()) } else { Ok(0.5) };
        let err = run_search(&g, &mut eval, &cfg).unwrap_err();
        assert_eq!(err.log.len(), 4);
        assert!(matches!(err.error, SearchError::Evaluator { iteration: 4, .. }));
    }
}
