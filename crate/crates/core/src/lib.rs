//! Algorithmic core of the BRIEF toolkit.
//!
//! Everything in this crate is a pure function of its inputs plus an
//! explicitly passed, seeded random generator. There is no IO here; the
//! `brief` crate wraps these types with file formats and a command line.
//!
//! * [`graph`]: layer graphs, connection candidates and adapter synthesis.
//! * [`ncs`]: the tabular Q-learning connection search.
//! * [`features`]: FNC, sliding-window dFNC and multi-scale dispersion entropy.
//! * [`nn`]: a small double-precision network engine with analytic gradients.
//! * [`evaluator`]: search rewards and planted-signal synthetic corpora.
//! * [`pipeline`]: four-stream encoders fused by self-attention.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod evaluator;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod ncs;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use graph::{ConnectionSpec, ConnectionType, LayerGraph, LayerKind, NodeId, Shape};
pub use ncs::{Episode, EpsilonSchedule, QTable, SearchConfig, SearchResult};
