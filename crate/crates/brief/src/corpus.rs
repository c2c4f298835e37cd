//! Subject corpora on disk: one time-course CSV per subject plus a manifest.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use brief_core::evaluator::{Subject, SyntheticConfig};
use brief_core::features::TimeCourses;
use serde::{Deserialize, Serialize};

use crate::io::{config_hash, read_json, read_matrix_csv, write_json, write_matrix_csv};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub label: usize,
    /// Path relative to the corpus directory.
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticConfig>,
    pub subjects: Vec<SubjectEntry>,
}

/// Writes `subjects/<id>.csv` for every subject and the corpus manifest.
pub fn write_corpus(dir: &Path, cfg: &SyntheticConfig, subjects: &[Subject]) -> Result<CorpusManifest> {
    let sub_dir = dir.join("subjects");
    fs::create_dir_all(&sub_dir).with_context(|| format!("cannot create {}", sub_dir.display()))?;
    let hash = config_hash(cfg)?;
    let mut entries = Vec::with_capacity(subjects.len());
    for s in subjects {
        let file = format!("subjects/{}.csv", s.tc.subject_id);
        write_matrix_csv(&dir.join(&file), &s.tc.data)?;
        entries.push(SubjectEntry { subject_id: s.tc.subject_id.clone(), label: s.label, file, seed: Some(cfg.seed), config_hash: Some(hash.clone()) });
    }
    let manifest = CorpusManifest { generator: Some(cfg.clone()), subjects: entries };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_corpus(dir: &Path) -> Result<Vec<Subject>> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        bail!("{} has no {MANIFEST}; create one with `brief gen-data` or list subjects by hand", dir.display());
    }
    let manifest: CorpusManifest = read_json(&path)?;
    if manifest.subjects.is_empty() {
        bail!("{}: corpus lists no subjects", path.display());
    }
    manifest
        .subjects
        .iter()
        .map(|e| {
            let data = read_matrix_csv(&dir.join(&e.file))?;
            let tc = TimeCourses::new(e.subject_id.clone(), data).with_context(|| format!("subject {}", e.subject_id))?;
            Ok(Subject { tc, label: e.label })
        })
        .collect()
}
