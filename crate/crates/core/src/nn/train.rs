use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{Mode, Network};
use super::ops::{argmax, cross_entropy};
use super::optim::{Adam, AdamConfig};
use super::tensor::Tensor;
use super::NnError;
use crate::graph::{LayerKind, Shape};
use crate::rng::{derive_seed, seeded, SeededRng};

/// Labelled samples sharing one input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub shape: Shape,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(shape: Shape, samples: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, NnError> {
        if samples.len() != labels.len() || samples.iter().any(|s| s.len() != shape.numel()) {
            return Err(NnError::InvalidConfig("sample sizes do not match the dataset shape"));
        }
        Ok(Dataset { shape, samples, labels })
    }

    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.shape.numel());
        for &i in idx {
            data.extend_from_slice(&self.samples[i]);
        }
        Tensor::from_data(idx.len(), self.shape, data)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { shape: self.shape, samples: idx.iter().map(|&i| self.samples[i].clone()).collect(), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Anything with per-sample integer labels.
pub trait Labeled {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Labeled for Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// A classifier trainable by [`fit`].
pub trait Trainable {
    type Data: Labeled + ?Sized;

    /// Mean cross-entropy of the batch and the flattened parameter gradients.
    fn loss_and_grads(&self, data: &Self::Data, idx: &[usize], rng: &mut SeededRng) -> Result<(f64, Vec<Vec<f64>>), NnError>;

    /// Class logits, `idx.len() x classes`, in evaluation mode.
    fn logits(&self, data: &Self::Data, idx: &[usize]) -> Result<Vec<Vec<f64>>, NnError>;

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>>;

    /// Which flattened parameter groups receive L1/L2 penalties.
    fn regularized(&self) -> Vec<bool>;
}

impl Trainable for Network {
    type Data = Dataset;

    fn loss_and_grads(&self, data: &Dataset, idx: &[usize], rng: &mut SeededRng) -> Result<(f64, Vec<Vec<f64>>), NnError> {
        let x = data.batch(idx);
        let trace = self.forward(&x, Mode::Train, rng)?;
        let out = trace.output();
        let classes = out.shape.numel();
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let (loss, dlogits) = cross_entropy(&out.data, &labels, classes);
        let seed = Tensor::from_data(out.batch, out.shape, dlogits);
        let output = self.graph().output_id().unwrap_or(*self.graph().topo_order().last().expect("nonempty"));
        let (grads, _) = self.backward(&trace, alloc::vec![(output, seed)]);
        Ok((loss, self.flatten_grads(&grads)))
    }

    fn logits(&self, data: &Dataset, idx: &[usize]) -> Result<Vec<Vec<f64>>, NnError> {
        let mut rng = seeded(0);
        let trace = self.forward(&data.batch(idx), Mode::Eval, &mut rng)?;
        let out = trace.output();
        Ok((0..out.batch).map(|b| out.item(b).to_vec()).collect())
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.all_params_mut()
    }

    fn regularized(&self) -> Vec<bool> {
        self.all_params().iter().map(|(id, _)| self.graph().node(*id).is_some_and(|n| n.kind == LayerKind::GRU)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub factor: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay { factor: 0.2, every: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr_decay: Option<StepDecay>,
    pub l1: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 64, adam: AdamConfig::default(), lr_decay: None, l1: 0.0, l2: 0.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) if d.every > 0 => self.adam.lr * libm::pow(d.factor, (epoch / d.every) as f64),
            _ => self.adam.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation accuracy after the final epoch.
    pub accuracy: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Fraction of `idx` whose argmax logit equals the label.
pub fn accuracy<M: Trainable>(model: &M, data: &M::Data, idx: &[usize]) -> Result<f64, NnError> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let logits = model.logits(data, idx)?;
    let hits = idx.iter().zip(&logits).filter(|(i, l)| argmax(l) == data.label(**i)).count();
    Ok(hits as f64 / idx.len() as f64)
}

/// Softmax probability of class 1 for each index.
pub fn positive_scores<M: Trainable>(model: &M, data: &M::Data, idx: &[usize]) -> Result<Vec<f64>, NnError> {
    let logits = model.logits(data, idx)?;
    Ok(logits
        .into_iter()
        .map(|mut l| {
            super::ops::softmax_in_place(&mut l);
            l.get(1).copied().unwrap_or(0.0)
        })
        .collect())
}

fn check_labels<D: Labeled + ?Sized>(data: &D, idx: &[usize]) -> Result<(), NnError> {
    if idx.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let first = data.label(idx[0]);
    if idx.iter().all(|&i| data.label(i) == first) {
        return Err(NnError::SingleClass);
    }
    Ok(())
}

/// Mini-batch Adam on cross-entropy over `train`; reports accuracy on `valid`.
pub fn fit<M: Trainable>(model: &mut M, data: &M::Data, train: &[usize], valid: &[usize], cfg: &TrainConfig) -> Result<TrainReport, NnError> {
    check_labels(data, train)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(NnError::InvalidConfig("epochs and batch size must be positive"));
    }
    let mut rng = seeded(derive_seed(cfg.seed, "train"));
    let mut adam = Adam::new(cfg.adam);
    let mask = model.regularized();
    let mut order = train.to_vec();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grads) = model.loss_and_grads(data, chunk, &mut rng)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
            let params = model.params_mut();
            if cfg.l1 > 0.0 || cfg.l2 > 0.0 {
                for ((g, p), reg) in grads.iter_mut().zip(&params).zip(&mask) {
                    if *reg {
                        for (gi, w) in g.iter_mut().zip(p.iter()) {
                            *gi += 2.0 * cfg.l2 * w + cfg.l1 * w.signum();
                        }
                    }
                }
            }
            adam.step(params, &grads, lr);
        }
        loss_curve.push(total / order.len() as f64);
    }
    let acc = accuracy(model, data, valid)?;
    Ok(TrainReport { accuracy: acc, loss_curve })
}

/// Convenience wrapper for a network on separate train and validation sets.
pub fn train(net: &mut Network, train_set: &Dataset, valid: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, NnError> {
    let n = train_set.samples.len();
    let mut merged = train_set.clone();
    merged.samples.extend(valid.samples.iter().cloned());
    merged.labels.extend(valid.labels.iter().copied());
    let tr: Vec<usize> = (0..n).collect();
    let va: Vec<usize> = (n..merged.labels.len()).collect();
    fit(net, &merged, &tr, &va, cfg)
}
