use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{extract_all, BriefConfig, PipelineError, Stream, StreamFlags, SubjectFeatures};
use crate::evaluator::{split_indices, Subject};
use crate::graph::{LayerGraph, LayerKind, Shape};
use crate::metrics::Metrics;
use crate::nn::ops::cross_entropy;
use crate::nn::templates::{dense_encoder, temporal_encoder, DenseEncoderConfig, TemporalEncoderConfig};
use crate::nn::{fit, positive_scores, Dataset, FusionCache, FusionHead, Labeled, Mode, Network, NnError, Tensor, Trace, TrainConfig, Trainable};
use crate::rng::{derive_seed, seeded, SeededRng};

/// Per-stream encoder inputs for a set of subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BriefData {
    pub streams: Vec<Stream>,
    pub shapes: Vec<Shape>,
    /// `inputs[k][i]` is subject `i`'s flattened input for `streams[k]`.
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<usize>,
    pub subject_ids: Vec<String>,
}

impl BriefData {
    pub fn from_features(features: &[SubjectFeatures], labels: &[usize], streams: StreamFlags) -> Result<Self, PipelineError> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(PipelineError::Config("need one label per subject and at least one subject"));
        }
        let enabled: Vec<Stream> = streams.enabled().collect();
        let mut shapes = Vec::new();
        let mut inputs = Vec::new();
        for &s in &enabled {
            let mut shape = None;
            let mut per = Vec::with_capacity(features.len());
            for f in features {
                let (sh, data) = f.stream_input(s).ok_or(PipelineError::Config("a subject lacks an enabled stream"))?;
                if *shape.get_or_insert(sh) != sh {
                    return Err(PipelineError::Config("subjects disagree on a stream's feature shape"));
                }
                per.push(data);
            }
            shapes.push(shape.expect("at least one subject"));
            inputs.push(per);
        }
        Ok(BriefData {
            streams: enabled,
            shapes,
            inputs,
            labels: labels.to_vec(),
            subject_ids: features.iter().map(|f| f.provenance.subject_id.clone()).collect(),
        })
    }

    pub fn from_subjects(subjects: &[Subject], cfg: &BriefConfig) -> Result<Self, PipelineError> {
        let features = subjects.iter().map(|s| extract_all(&s.tc, &cfg.features, cfg.streams)).collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<usize> = subjects.iter().map(|s| s.label).collect();
        Self::from_features(&features, &labels, cfg.streams)
    }

    fn index_of(&self, s: Stream) -> Option<usize> {
        self.streams.iter().position(|x| *x == s)
    }

    pub fn batch(&self, k: usize, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.shapes[k].numel());
        for &i in idx {
            data.extend_from_slice(&self.inputs[k][i]);
        }
        Tensor::from_data(idx.len(), self.shapes[k], data)
    }

    /// One stream's inputs with labels, for standalone encoder training.
    pub fn stream_dataset(&self, s: Stream, idx: &[usize]) -> Option<Dataset> {
        let k = self.index_of(s)?;
        Some(Dataset {
            shape: self.shapes[k],
            samples: idx.iter().map(|&i| self.inputs[k][i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Restricts to the given streams (which must be present).
    pub fn select(&self, streams: StreamFlags) -> Result<Self, PipelineError> {
        let mut out =
            BriefData { streams: Vec::new(), shapes: Vec::new(), inputs: Vec::new(), labels: self.labels.clone(), subject_ids: self.subject_ids.clone() };
        for s in streams.enabled() {
            let k = self.index_of(s).ok_or(PipelineError::Config("requested stream was not extracted"))?;
            out.streams.push(s);
            out.shapes.push(self.shapes[k]);
            out.inputs.push(self.inputs[k].clone());
        }
        Ok(out)
    }
}

impl Labeled for BriefData {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Template encoder for a stream, with the configured token dim.
pub fn template_for(stream: Stream, shape: Shape, cfg: &BriefConfig) -> Result<LayerGraph, PipelineError> {
    Ok(match stream {
        Stream::Fnc => dense_encoder(shape, &DenseEncoderConfig { token_dim: cfg.token_dim, ..cfg.dense.clone() })?,
        _ => temporal_encoder(shape, &TemporalEncoderConfig { token_dim: cfg.token_dim, ..cfg.temporal.clone() })?,
    })
}

fn encoder_for(stream: Stream, shape: Shape, cfg: &BriefConfig) -> Result<LayerGraph, PipelineError> {
    let g = match cfg.encoders.get(&stream) {
        Some(doc) => LayerGraph::from_doc(doc.clone())?,
        None => template_for(stream, shape, cfg)?,
    };
    if g.input_shape() != shape {
        return Err(NnError::ShapeMismatch { node: g.input_id(), expected: g.input_shape(), found: shape }.into());
    }
    let token = g.node(g.fusion_index()).expect("fusion node exists").out_shape;
    if token != Shape::Flat(cfg.token_dim) {
        return Err(PipelineError::TokenMismatch { stream, expected: cfg.token_dim, found: token.numel() });
    }
    Ok(g)
}

/// Element-wise affine input normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Normalizer { mean: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Per-element mean and inverse population std over `idx`; constant
    /// elements keep scale 1.
    pub fn fit(samples: &[Vec<f64>], idx: &[usize]) -> Self {
        let n = samples[idx[0]].len();
        let m = idx.len() as f64;
        let mut mean = vec![0.0; n];
        for &i in idx {
            for (a, v) in mean.iter_mut().zip(&samples[i]) {
                *a += v / m;
            }
        }
        let mut var = vec![0.0; n];
        for &i in idx {
            for ((a, v), mu) in var.iter_mut().zip(&samples[i]).zip(&mean) {
                *a += (v - mu) * (v - mu) / m;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-12 { 1.0 / libm::sqrt(*v) } else { 1.0 }).collect();
        Normalizer { mean, scale }
    }

    fn apply(&self, t: &mut Tensor) {
        let n = self.mean.len();
        for row in t.data.chunks_exact_mut(n) {
            for ((v, mu), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - mu) * s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BriefModel {
    pub encoders: Vec<(Stream, Network)>,
    pub normalizers: Vec<Normalizer>,
    pub head: FusionHead,
}

/// Forward activations of every encoder plus the fusion head.
#[derive(Debug, Clone)]
pub struct BriefTrace {
    pub encoders: Vec<Trace>,
    pub logits: Tensor,
    pub fusion: FusionCache,
}

impl BriefModel {
    pub fn new(data: &BriefData, cfg: &BriefConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let seed = derive_seed(cfg.seed, "model");
        let mut encoders = Vec::new();
        for (s, shape) in data.streams.iter().zip(&data.shapes) {
            let g = encoder_for(*s, *shape, cfg)?;
            encoders.push((*s, Network::new(g, &mut seeded(derive_seed(seed, s.name())))?));
        }
        let normalizers = data.shapes.iter().map(|s| Normalizer::identity(s.numel())).collect();
        let head = FusionHead::new(encoders.len(), cfg.token_dim, &cfg.fusion, &mut seeded(derive_seed(seed, "fusion")))?;
        Ok(BriefModel { encoders, normalizers, head })
    }

    /// Fits the input normalisers on the subjects in `idx`.
    pub fn fit_normalizers(&mut self, data: &BriefData, idx: &[usize]) {
        self.normalizers = data.inputs.iter().map(|per| Normalizer::fit(per, idx)).collect();
    }

    pub fn streams(&self) -> Vec<Stream> {
        self.encoders.iter().map(|(s, _)| *s).collect()
    }

    fn check_data(&self, data: &BriefData) -> Result<(), NnError> {
        if data.streams != self.streams() {
            return Err(NnError::InvalidConfig("data streams do not match the model"));
        }
        Ok(())
    }

    pub fn forward(&self, data: &BriefData, idx: &[usize], mode: Mode, rng: &mut SeededRng) -> Result<BriefTrace, NnError> {
        self.check_data(data)?;
        let n = self.encoders.len();
        let dt = self.head.token_dim;
        let mut tokens = Tensor::zeros(idx.len(), Shape::seq(n, dt));
        let mut traces = Vec::with_capacity(n);
        for (k, (_, net)) in self.encoders.iter().enumerate() {
            let mut x = data.batch(k, idx);
            self.normalizers[k].apply(&mut x);
            let trace = net.forward(&x, mode, rng)?;
            let t = trace.activation(net.graph().fusion_index()).expect("fusion node evaluated");
            for b in 0..idx.len() {
                tokens.item_mut(b)[k * dt..(k + 1) * dt].copy_from_slice(t.item(b));
            }
            traces.push(trace);
        }
        let (logits, fusion) = if mode == Mode::Train { self.head.forward_train(&tokens, rng)? } else { self.head.forward(&tokens)? };
        Ok(BriefTrace { encoders: traces, logits, fusion })
    }
}

impl Trainable for BriefModel {
    type Data = BriefData;

    fn loss_and_grads(&self, data: &BriefData, idx: &[usize], rng: &mut SeededRng) -> Result<(f64, Vec<Vec<f64>>), NnError> {
        let tr = self.forward(data, idx, Mode::Train, rng)?;
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let (loss, dl) = cross_entropy(&tr.logits.data, &labels, self.head.classes);
        let (head_grads, dtokens) = self.head.backward(&tr.fusion, &Tensor::from_data(idx.len(), tr.logits.shape, dl));
        let dt = self.head.token_dim;
        let mut grads = Vec::new();
        for (k, (_, net)) in self.encoders.iter().enumerate() {
            let mut seed = Tensor::zeros(idx.len(), Shape::Flat(dt));
            for b in 0..idx.len() {
                seed.item_mut(b).copy_from_slice(&dtokens.item(b)[k * dt..(k + 1) * dt]);
            }
            let (g, _) = net.backward(&tr.encoders[k], vec![(net.graph().fusion_index(), seed)]);
            grads.extend(net.flatten_grads(&g));
        }
        grads.extend(head_grads);
        Ok((loss, grads))
    }

    fn logits(&self, data: &BriefData, idx: &[usize]) -> Result<Vec<Vec<f64>>, NnError> {
        let tr = self.forward(data, idx, Mode::Eval, &mut seeded(0))?;
        Ok((0..idx.len()).map(|b| tr.logits.item(b).to_vec()).collect())
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for (_, net) in self.encoders.iter_mut() {
            out.extend(net.all_params_mut());
        }
        out.extend(self.head.params.iter_mut().map(|p| &mut p.value));
        out
    }

    fn regularized(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for (_, net) in &self.encoders {
            out.extend(net.all_params().iter().map(|(id, _)| net.graph().node(*id).is_some_and(|n| n.kind == LayerKind::GRU)));
        }
        out.extend(core::iter::repeat_n(false, self.head.params.len()));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BriefReport {
    pub streams: Vec<Stream>,
    pub metrics: Metrics,
    pub loss_curve: Vec<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// The stratified train/test split [`train_brief`] uses for `cfg`.
pub fn test_split(labels: &[usize], cfg: &BriefConfig) -> (Vec<usize>, Vec<usize>) {
    split_indices(labels, cfg.test_fraction, derive_seed(cfg.seed, "test-split"))
}

/// Stratified train/test split, end-to-end training, test-set metrics.
/// `cfg.seed` drives the split, initialisation and training order.
pub fn train_brief(data: &BriefData, cfg: &BriefConfig) -> Result<(BriefModel, BriefReport), PipelineError> {
    cfg.validate()?;
    let data = data.select(cfg.streams)?;
    let (train, test) = test_split(&data.labels, cfg);
    let mut model = BriefModel::new(&data, cfg)?;
    if cfg.standardize {
        model.fit_normalizers(&data, &train);
    }
    let tcfg = TrainConfig { seed: derive_seed(cfg.seed, "train"), ..cfg.training.clone() };
    let report = fit(&mut model, &data, &train, &test, &tcfg)?;
    let scores = positive_scores(&model, &data, &test)?;
    let labels: Vec<usize> = test.iter().map(|&i| data.labels[i]).collect();
    let metrics = Metrics::from_scores(&scores, &labels);
    Ok((model, BriefReport { streams: data.streams.clone(), metrics, loss_curve: report.loss_curve, train, test }))
}
