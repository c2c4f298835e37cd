//! File formats, IO and the command line for the `brief-core` engine.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod dot;
pub mod io;
pub mod manifest;
pub mod parallel;

pub use cli::{run, ExperimentConfig};
