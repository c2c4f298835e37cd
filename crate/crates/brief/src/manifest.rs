//! Per-run manifest written into every output directory.

use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::io::{config_hash, write_json};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, verbatim.
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, args: &[String], seed: u64, config: &C) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: args.to_vec(),
            seed,
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            outputs: Vec::new(),
        })
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.outputs.sort();
        self.outputs.dedup();
        write_json(&dir.join(RUN_MANIFEST), &self)
    }
}
