//! Long-term memory: an exact in-process vector store over every stored
//! event, ranked by a composite of blended text/image similarity, importance
//! and confidence minus a vagueness/discrepancy penalty.
//!
//! Maintenance runs once per processed event: importance decays
//! exponentially (slower for safety-critical events), routine events whose
//! importance drops below the prune threshold are removed, and every
//! retrieval boosts the returned entries' importance.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LocomotionMode, PerceptionEvent, SafetyPartition};
use crate::perception::cosine;

#[derive(Debug, Error)]
pub enum LtmError {
    #[error("event `{0}` is already stored")]
    DuplicateEvent(String),
    #[error("embedding dimensions differ ({query} vs {entry})")]
    DimensionMismatch { query: usize, entry: usize },
    #[error("retrieval needs k >= 1")]
    ZeroK,
    #[error("snapshot {path}, line {line}: {reason}")]
    Snapshot { path: PathBuf, line: usize, reason: String },
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmWeights {
    pub similarity: f64,
    pub importance: f64,
    pub confidence: f64,
    pub discrepancy_penalty: f64,
    pub vagueness_penalty: f64,
    /// Multiplier applied to the penalty of safety-critical entries.
    pub safety_penalty_reduction: f64,
    pub decay_safety: f64,
    pub decay_routine: f64,
    pub prune_threshold: f64,
    pub top_k: usize,
    /// Additive importance boost per retrieval, capped at 1.
    pub boost_amount: f64,
}

impl Default for LtmWeights {
    fn default() -> Self {
        Self {
            similarity: 0.65,
            importance: 0.2,
            confidence: 0.15,
            discrepancy_penalty: 0.3,
            vagueness_penalty: 0.2,
            safety_penalty_reduction: 0.7,
            decay_safety: 0.005,
            decay_routine: 0.03,
            prune_threshold: 0.1,
            top_k: 5,
            boost_amount: 0.05,
        }
    }
}

impl LtmWeights {
    /// `similarity·w_s + importance·w_i + confidence·w_c − penalty`, where the
    /// vagueness/discrepancy penalty is scaled down for safety-critical
    /// entries.
    pub fn composite_score(
        &self,
        similarity: f64,
        importance: f64,
        confidence: f64,
        vagueness: f64,
        discrepancy: f64,
        safety_critical: bool,
    ) -> f64 {
        let mut penalty = self.discrepancy_penalty * discrepancy + self.vagueness_penalty * vagueness;
        if safety_critical {
            penalty *= self.safety_penalty_reduction;
        }
        self.similarity * similarity + self.importance * importance + self.confidence * confidence - penalty
    }

    pub fn decay_rate(&self, safety_critical: bool) -> f64 {
        if safety_critical {
            self.decay_safety
        } else {
            self.decay_routine
        }
    }
}

/// `(1 − d)·cos(text) + d·cos(image)`: high discrepancy shifts retrieval
/// toward visual similarity.
pub fn blended_similarity(
    query_text: &[f64],
    query_image: &[f64],
    entry_text: &[f64],
    entry_image: &[f64],
    discrepancy: f64,
) -> Result<f64, LtmError> {
    let text = cosine(query_text, entry_text)
        .ok_or(LtmError::DimensionMismatch { query: query_text.len(), entry: entry_text.len() })?;
    let image = cosine(query_image, entry_image)
        .ok_or(LtmError::DimensionMismatch { query: query_image.len(), entry: entry_image.len() })?;
    Ok((1.0 - discrepancy) * text + discrepancy * image)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmEntry {
    #[serde(flatten)]
    pub event: PerceptionEvent,
    pub importance_current: f64,
    pub safety_critical: bool,
    pub retrieval_count: u64,
    pub stored_at_cycle: u64,
}

impl LtmEntry {
    pub fn id(&self) -> &str {
        &self.event.event_id
    }

    pub fn boost(&mut self, amount: f64) {
        self.importance_current = (self.importance_current + amount).min(1.0);
    }
}

/// A ranked retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub entry_id: String,
    pub mode: LocomotionMode,
    pub summary: String,
    pub similarity: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct LtmStore {
    entries: Vec<LtmEntry>,
    ids: HashSet<String>,
    weights: LtmWeights,
    partition: SafetyPartition,
}

impl Default for LtmStore {
    fn default() -> Self {
        Self::new(LtmWeights::default(), SafetyPartition::default())
    }
}

impl LtmStore {
    pub fn new(weights: LtmWeights, partition: SafetyPartition) -> Self {
        Self { entries: Vec::new(), ids: HashSet::new(), weights, partition }
    }

    pub fn weights(&self) -> &LtmWeights {
        &self.weights
    }

    pub fn entries(&self) -> &[LtmEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&LtmEntry> {
        self.entries.iter().find(|e| e.id() == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.ids.clear();
    }

    pub fn store(&mut self, event: PerceptionEvent, cycle: u64) -> Result<String, LtmError> {
        if self.ids.contains(&event.event_id) {
            return Err(LtmError::DuplicateEvent(event.event_id));
        }
        let id = event.event_id.clone();
        let entry = LtmEntry {
            importance_current: event.scores.importance.clamp(0.0, 1.0),
            safety_critical: self.partition.is_safety_critical(event.mode),
            retrieval_count: 0,
            stored_at_cycle: cycle,
            event,
        };
        self.ids.insert(id.clone());
        self.entries.push(entry);
        Ok(id)
    }

    /// Scores and orders entries without mutating them. Returns
    /// `(entry index, similarity, composite score)` for the top `k`.
    pub fn rank(&self, query: &PerceptionEvent, k: usize) -> Result<Vec<(usize, f64, f64)>, LtmError> {
        if k == 0 {
            return Err(LtmError::ZeroK);
        }
        let d = query.scores.discrepancy;
        let mut scored = Vec::with_capacity(self.entries.len());
        for (i, entry) in self.entries.iter().enumerate() {
            let sim = blended_similarity(
                &query.text_embedding,
                &query.image_embedding,
                &entry.event.text_embedding,
                &entry.event.image_embedding,
                d,
            )?;
            let s = &entry.event.scores;
            let score = self.weights.composite_score(
                sim,
                entry.importance_current,
                s.confidence,
                s.vagueness,
                s.discrepancy,
                entry.safety_critical,
            );
            scored.push((i, sim, score));
        }
        scored.sort_by(|a, b| {
            let (ea, eb) = (&self.entries[a.0], &self.entries[b.0]);
            b.2.total_cmp(&a.2)
                .then_with(|| eb.importance_current.total_cmp(&ea.importance_current))
                .then_with(|| eb.stored_at_cycle.cmp(&ea.stored_at_cycle))
                .then(Ordering::Equal)
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Top-`k` retrieval. Similarity blends with the query's discrepancy;
    /// the composite uses each entry's own scores. Returned entries have
    /// their retrieval count incremented and importance boosted.
    pub fn retrieve(&mut self, query: &PerceptionEvent, k: usize) -> Result<Vec<RetrievalHit>, LtmError> {
        let ranked = self.rank(query, k)?;
        let boost = self.weights.boost_amount;
        Ok(ranked
            .into_iter()
            .map(|(i, similarity, score)| {
                let entry = &mut self.entries[i];
                entry.retrieval_count += 1;
                entry.boost(boost);
                RetrievalHit {
                    entry_id: entry.id().to_string(),
                    mode: entry.event.mode,
                    summary: entry.event.summary.clone(),
                    similarity,
                    score,
                }
            })
            .collect())
    }

    /// Exponential importance decay over `cycles` maintenance cycles.
    pub fn decay(&mut self, cycles: u64) {
        if cycles == 0 {
            return;
        }
        for entry in &mut self.entries {
            let rate = self.weights.decay_rate(entry.safety_critical);
            entry.importance_current *= (-rate * cycles as f64).exp();
        }
    }

    /// Removes routine entries with importance strictly below the threshold.
    /// Safety-critical entries are never removed.
    pub fn prune(&mut self) -> usize {
        let threshold = self.weights.prune_threshold;
        let before = self.entries.len();
        let ids = &mut self.ids;
        self.entries.retain(|e| {
            let keep = e.safety_critical || e.importance_current >= threshold;
            if !keep {
                ids.remove(&e.event.event_id);
            }
            keep
        });
        before - self.entries.len()
    }

    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<(), LtmError> {
        let mut out = BufWriter::new(File::create(path)?);
        for entry in &self.entries {
            let line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a snapshot, replacing current contents. Safety flags are
    /// recomputed under this store's partition.
    pub fn load_snapshot(&mut self, path: impl AsRef<Path>) -> Result<(), LtmError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let snapshot_err = |line: usize, reason: String| LtmError::Snapshot { path: path.to_path_buf(), line, reason };
        let mut loaded = LtmStore::new(self.weights.clone(), self.partition.clone());
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: LtmEntry = serde_json::from_str(&line).map_err(|e| snapshot_err(i + 1, e.to_string()))?;
            if !(0.0..=1.0).contains(&entry.importance_current) {
                return Err(snapshot_err(i + 1, format!("importance {} outside [0, 1]", entry.importance_current)));
            }
            let expected = self.partition.is_safety_critical(entry.event.mode);
            if entry.safety_critical != expected {
                log::warn!("snapshot entry {} safety flag recomputed for mode {}", entry.id(), entry.event.mode);
                entry.safety_critical = expected;
            }
            if !loaded.ids.insert(entry.id().to_string()) {
                return Err(snapshot_err(i + 1, format!("duplicate event `{}`", entry.id())));
            }
            loaded.entries.push(entry);
        }
        *self = loaded;
        Ok(())
    }
}
