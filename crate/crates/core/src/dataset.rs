//! JSON-lines dataset records and loader.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CommandType, LocomotionMode};
use crate::perception::{FrameRef, KeyedScriptBackend, PerceptionInput, Stage, UNIT_NORM_TOLERANCE};
use crate::pipeline::AblationCondition;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Suffix of a `scripted_responses` key holding the refinement-stage reply.
pub const REFINEMENT_KEY_SUFFIX: &str = "/refinement";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}, line {line}: {reason}")]
    Invalid { path: PathBuf, line: usize, reason: String },
    #[error("dataset i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub event_id: String,
    pub episode_id: String,
    pub timestamp: f64,
    pub command: String,
    pub command_type: CommandType,
    pub ground_truth_mode: LocomotionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding: Option<Vec<f64>>,
    /// Condition tag to raw perception reply; `{tag}/refinement` holds the
    /// refinement reply.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scripted_responses: BTreeMap<String, String>,
}

impl EpisodeRecord {
    pub fn to_input(&self) -> PerceptionInput {
        PerceptionInput {
            event_id: self.event_id.clone(),
            command: self.command.clone(),
            frame: FrameRef { reference: self.frame_ref.clone(), embedding: self.image_embedding.clone() },
            timestamp: self.timestamp,
            command_type: Some(self.command_type),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {DATASET_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.event_id.is_empty() {
            return Err("empty event_id".into());
        }
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(format!("invalid timestamp {}", self.timestamp));
        }
        if let Some(e) = &self.image_embedding {
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(format!("image_embedding is not unit-norm (norm {norm})"));
            }
        }
        if self.frame_ref.is_none() && self.image_embedding.is_none() {
            return Err("record has neither frame_ref nor image_embedding".into());
        }
        Ok(())
    }
}

/// Loads, validates and sorts by `(episode_id, timestamp)`; the sort is
/// stable so equal timestamps keep file order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>, DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut records = Vec::new();
    let mut ids = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |reason: String| DatasetError::Invalid { path: path.to_path_buf(), line: i + 1, reason };
        let record: EpisodeRecord = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        record.validate().map_err(invalid)?;
        if let Some(first) = ids.insert(record.event_id.clone(), i + 1) {
            return Err(invalid(format!("duplicate event_id `{}` (first on line {first})", record.event_id)));
        }
        records.push(record);
    }
    records.sort_by(|a, b| a.episode_id.cmp(&b.episode_id).then(a.timestamp.total_cmp(&b.timestamp)));
    Ok(records)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[EpisodeRecord]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    out.write_all(dataset_to_jsonl(records).as_bytes()).map_err(io)?;
    out.flush().map_err(io)
}

pub fn dataset_to_jsonl(records: &[EpisodeRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Backend replaying the records' scripted responses for `condition`.
/// Returns `None` when no record carries a script for that condition.
pub fn scripted_backend(records: &[EpisodeRecord], condition: AblationCondition) -> Option<KeyedScriptBackend> {
    let tag = condition.tag();
    let refinement_key = format!("{tag}{REFINEMENT_KEY_SUFFIX}");
    let mut backend = KeyedScriptBackend::new();
    for r in records {
        if let Some(raw) = r.scripted_responses.get(tag) {
            backend.insert(r.event_id.clone(), Stage::Perception, raw.clone());
        }
        if let Some(raw) = r.scripted_responses.get(&refinement_key) {
            backend.insert(r.event_id.clone(), Stage::Refinement, raw.clone());
        }
    }
    (!backend.is_empty()).then_some(backend)
}
