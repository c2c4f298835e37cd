//! Four-stream classifier: per-stream encoders, transformer fusion and
//! attention-based rankings.

mod extract;
mod model;
mod rank;
mod search;

use alloc::collections::BTreeMap;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use extract::{extract_all, FeatureParams, Provenance, SubjectFeatures};
pub use model::{template_for, test_split, train_brief, BriefData, BriefModel, BriefReport, BriefTrace, Normalizer};
pub use rank::{rank_importance, Rankings, RegionRanking, StreamScore};
pub use search::{optimize_encoder, EncoderSearch};

use crate::evaluator::EvalError;
use crate::features::FeatureError;
use crate::graph::{GraphDoc, GraphError};
use crate::ncs::SearchFailure;
use crate::nn::templates::{DenseEncoderConfig, TemporalEncoderConfig};
use crate::nn::{FusionConfig, NnError, TrainConfig};

/// Feature streams in token order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Tc,
    Fnc,
    Dfnc,
    Msde,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Tc, Stream::Fnc, Stream::Dfnc, Stream::Msde];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Tc => "tc",
            Stream::Fnc => "fnc",
            Stream::Dfnc => "dfnc",
            Stream::Msde => "msde",
        }
    }

    /// Whether the encoder input's positions are regions (components).
    pub fn positions_are_regions(self) -> bool {
        matches!(self, Stream::Fnc | Stream::Msde)
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Stream {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stream::ALL.into_iter().find(|x| x.name() == s).ok_or(PipelineError::Config("unknown stream name"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamFlags {
    pub tc: bool,
    pub fnc: bool,
    pub dfnc: bool,
    pub msde: bool,
}

impl Default for StreamFlags {
    fn default() -> Self {
        StreamFlags { tc: true, fnc: true, dfnc: true, msde: true }
    }
}

impl StreamFlags {
    pub fn only(stream: Stream) -> Self {
        let mut f = StreamFlags { tc: false, fnc: false, dfnc: false, msde: false };
        f.set(stream, true);
        f
    }

    pub fn get(&self, s: Stream) -> bool {
        match s {
            Stream::Tc => self.tc,
            Stream::Fnc => self.fnc,
            Stream::Dfnc => self.dfnc,
            Stream::Msde => self.msde,
        }
    }

    pub fn set(&mut self, s: Stream, on: bool) {
        match s {
            Stream::Tc => self.tc = on,
            Stream::Fnc => self.fnc = on,
            Stream::Dfnc => self.dfnc = on,
            Stream::Msde => self.msde = on,
        }
    }

    pub fn enabled(&self) -> impl Iterator<Item = Stream> + '_ {
        Stream::ALL.into_iter().filter(|s| self.get(*s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BriefConfig {
    pub features: FeatureParams,
    pub streams: StreamFlags,
    /// Template for the TC, dFNC and MsDE encoders.
    pub temporal: TemporalEncoderConfig,
    /// Template for the FNC encoder.
    pub dense: DenseEncoderConfig,
    /// Replacement encoder graphs, e.g. the output of a connection search.
    pub encoders: BTreeMap<Stream, GraphDoc>,
    pub token_dim: usize,
    pub fusion: FusionConfig,
    pub training: TrainConfig,
    pub test_fraction: f64,
    /// Z-score every input element with statistics of the training subjects.
    pub standardize: bool,
    /// Drives the split, initialisation and training order.
    pub seed: u64,
}

impl Default for BriefConfig {
    fn default() -> Self {
        BriefConfig {
            features: FeatureParams::default(),
            streams: StreamFlags::default(),
            temporal: TemporalEncoderConfig::default(),
            dense: DenseEncoderConfig::default(),
            encoders: BTreeMap::new(),
            token_dim: 16,
            fusion: FusionConfig { hidden: (32, 16), token_dropout: 0.7, ..FusionConfig::default() },
            training: TrainConfig { epochs: 60, ..TrainConfig::default() },
            test_fraction: 0.2,
            standardize: true,
            seed: 0,
        }
    }
}

impl BriefConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.streams.enabled().next().is_none() {
            return Err(PipelineError::Config("at least one stream must be enabled"));
        }
        if self.token_dim == 0 {
            return Err(PipelineError::Config("token_dim must be positive"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(PipelineError::Config("test_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("subject {subject}: {source}")]
    Feature { subject: alloc::string::String, source: FeatureError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("connection search failed: {0}")]
    Search(#[from] SearchFailure),
    #[error("stream {stream} encoder emits {found} values per token, expected {expected}")]
    TokenMismatch { stream: Stream, expected: usize, found: usize },
}
