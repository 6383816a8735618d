//! The per-event agent loop: perceive with STM context, update STM, gate on
//! clarity, refine with LTM insights when needed, store to LTM, maintain.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EngineConfig, RampBasis};
use crate::dataset::EpisodeRecord;
use crate::gate::{refine, LtmInsight};
use crate::ltm::LtmStore;
use crate::model::{CommandType, LocomotionMode, PerceptionEvent, ScoreSet};
use crate::perception::{perceive, Embedder, HashEmbedder, PerceptionBackend, PerceptionError, PerceptionInput};
use crate::stm::StmBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationCondition {
    NoMem,
    #[serde(rename = "STMOnly")]
    StmOnly,
    #[serde(rename = "STMplusLTM")]
    StmPlusLtm,
}

impl AblationCondition {
    pub const ALL: [AblationCondition; 3] =
        [AblationCondition::NoMem, AblationCondition::StmOnly, AblationCondition::StmPlusLtm];

    pub fn tag(self) -> &'static str {
        match self {
            AblationCondition::NoMem => "NoMem",
            AblationCondition::StmOnly => "STMOnly",
            AblationCondition::StmPlusLtm => "STMplusLTM",
        }
    }

    pub fn uses_stm(self) -> bool {
        !matches!(self, AblationCondition::NoMem)
    }

    pub fn uses_ltm(self) -> bool {
        matches!(self, AblationCondition::StmPlusLtm)
    }
}

impl fmt::Display for AblationCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AblationCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nomem" => Ok(AblationCondition::NoMem),
            "stmonly" => Ok(AblationCondition::StmOnly),
            "stmplusltm" | "stm+ltm" => Ok(AblationCondition::StmPlusLtm),
            _ => Err(format!("unknown condition `{s}` (expected NoMem, STMOnly or STMplusLTM)")),
        }
    }
}

/// The pipeline's output for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub event_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_id: Option<String>,
    /// Absent when the event failed.
    pub final_mode: Option<LocomotionMode>,
    pub initial_mode: Option<LocomotionMode>,
    pub refined: bool,
    pub fallback: bool,
    /// The backend's mode string was unrecognised; refinement was forced.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unknown_mode: bool,
    pub clarity: Option<f64>,
    pub threshold: f64,
    pub ltm_hits_used: Vec<String>,
    pub cycle: u64,
    pub condition: AblationCondition,
    pub final_scores: Option<ScoreSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<LocomotionMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_type: Option<CommandType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Decision {
    pub fn is_error(&self) -> bool {
        self.final_mode.is_none()
    }
}

/// One agent run over a single ablation condition.
pub struct Agent {
    config: EngineConfig,
    condition: AblationCondition,
    backend: Box<dyn PerceptionBackend>,
    embedder: Box<dyn Embedder>,
    stm: StmBuffer,
    ltm: LtmStore,
    cycle: u64,
    ramp_cycle: u64,
}

impl Agent {
    pub fn new(
        config: EngineConfig,
        condition: AblationCondition,
        backend: Box<dyn PerceptionBackend>,
        embedder: Box<dyn Embedder>,
    ) -> Self {
        let stm = StmBuffer::new(config.stm_retention_s);
        let ltm = LtmStore::new(config.ltm.clone(), config.safety_modes.clone());
        Self { config, condition, backend, embedder, stm, ltm, cycle: 0, ramp_cycle: 0 }
    }

    /// Agent with the deterministic hash embedder configured by `config`.
    pub fn with_hash_embedder(
        config: EngineConfig,
        condition: AblationCondition,
        backend: Box<dyn PerceptionBackend>,
    ) -> Self {
        let embedder = HashEmbedder::new(config.embedding_dim, config.embedding_seed);
        Self::new(config, condition, backend, Box::new(embedder))
    }

    pub fn condition(&self) -> AblationCondition {
        self.condition
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn stm(&self) -> &StmBuffer {
        &self.stm
    }

    pub fn ltm(&self) -> &LtmStore {
        &self.ltm
    }

    pub fn ltm_mut(&mut self) -> &mut LtmStore {
        &mut self.ltm
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn into_backend(self) -> Box<dyn PerceptionBackend> {
        self.backend
    }

    pub fn reset_stm(&mut self) {
        self.stm.clear();
    }

    /// Processes one event. Failures produce an error decision rather than
    /// aborting; every call consumes exactly one maintenance cycle.
    pub fn process_event(&mut self, input: &PerceptionInput) -> Decision {
        let cycle = self.cycle;
        let threshold = self.config.clarity.clarity_threshold(self.ramp_cycle);
        let mut decision = Decision {
            event_id: input.event_id.clone(),
            episode_id: None,
            final_mode: None,
            initial_mode: None,
            refined: false,
            fallback: false,
            unknown_mode: false,
            clarity: None,
            threshold,
            ltm_hits_used: Vec::new(),
            cycle,
            condition: self.condition,
            final_scores: None,
            ground_truth: None,
            command_type: input.command_type,
            error: None,
        };

        let stored_unrefined = match self.run_stages(input, &mut decision) {
            Ok(stored_unrefined) => stored_unrefined,
            Err(e) => {
                decision.error = Some(e);
                false
            }
        };

        self.ltm.decay(1);
        self.ltm.prune();
        self.cycle += 1;
        if self.config.ramp_basis == RampBasis::AllEvents || stored_unrefined {
            self.ramp_cycle += 1;
        }
        decision
    }

    /// Returns whether an event was stored to LTM without refinement.
    fn run_stages(&mut self, input: &PerceptionInput, decision: &mut Decision) -> Result<bool, String> {
        let stm_context = if self.condition.uses_stm() { self.stm.context() } else { Vec::new() };
        let params = self.config.perception_params();

        let (event, forced) = match perceive(self.backend.as_mut(), self.embedder.as_ref(), input, &stm_context, params) {
            Ok(event) => (event, false),
            Err(PerceptionError::UnknownMode { value, provisional }) => {
                log::warn!("event {}: unknown mode `{value}`, forcing refinement", input.event_id);
                let mut event = *provisional;
                if let Some(latest) = self.stm.latest_mode() {
                    event.mode = latest;
                }
                (event, true)
            }
            Err(e) => return Err(e.to_string()),
        };
        decision.unknown_mode = forced;
        decision.initial_mode = Some(event.mode);

        if self.condition.uses_stm() {
            self.stm.insert(event.clone()).map_err(|e| e.to_string())?;
        }

        let gate = self.config.clarity.needs_refinement(&event, self.ramp_cycle, forced);
        decision.clarity = Some(gate.clarity);

        if !self.condition.uses_ltm() {
            self.finish(decision, &event);
            return Ok(false);
        }

        if !gate.refine {
            self.finish(decision, &event);
            self.ltm.store(event, decision.cycle).map_err(|e| e.to_string())?;
            return Ok(true);
        }

        let hits = self.ltm.retrieve(&event, self.config.ltm.top_k).map_err(|e| e.to_string())?;
        decision.ltm_hits_used = hits.iter().map(|h| h.entry_id.clone()).collect();
        let insights: Vec<LtmInsight> =
            hits.into_iter().map(|h| LtmInsight { mode: h.mode, summary: h.summary }).collect();

        let refined = refine(
            self.backend.as_mut(),
            self.embedder.as_ref(),
            input,
            &event,
            &stm_context,
            &insights,
            self.config.refinement_params(),
        );
        let stored = match refined {
            Ok(refined) => {
                decision.refined = true;
                refined
            }
            Err(e) => {
                log::warn!("event {}: refinement failed ({e}), keeping the initial prediction", input.event_id);
                decision.fallback = true;
                PerceptionEvent { low_clarity: true, ..event }
            }
        };
        self.finish(decision, &stored);
        self.ltm.store(stored, decision.cycle).map_err(|e| e.to_string())?;
        Ok(false)
    }

    fn finish(&self, decision: &mut Decision, event: &PerceptionEvent) {
        decision.final_mode = Some(event.mode);
        decision.final_scores = Some(event.scores);
    }

    /// Processes one episode in order with a fresh STM. LTM carries over
    /// unless `persist_ltm_across_episodes` is off.
    pub fn run_episode(&mut self, records: &[EpisodeRecord]) -> Vec<Decision> {
        self.stm.clear();
        if !self.config.persist_ltm_across_episodes {
            self.ltm.clear();
        }
        records
            .iter()
            .map(|record| {
                let mut decision = self.process_event(&record.to_input());
                decision.episode_id = Some(record.episode_id.clone());
                decision.ground_truth = Some(record.ground_truth_mode);
                decision
            })
            .collect()
    }

    /// Runs every episode of a dataset sorted by `(episode_id, timestamp)`.
    pub fn run_dataset(&mut self, records: &[EpisodeRecord]) -> Vec<Decision> {
        let mut decisions = Vec::with_capacity(records.len());
        for episode in records.chunk_by(|a, b| a.episode_id == b.episode_id) {
            decisions.extend(self.run_episode(episode));
        }
        decisions
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("decision log {path}, line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("decision log {0} has no header line")]
    MissingHeader(PathBuf),
    #[error("decision log i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub condition: AblationCondition,
    pub backend: crate::perception::BackendKind,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogLine {
    Header(RunHeader),
    Decision(Box<Decision>),
}

/// A run's header plus its decisions, serialized as JSON lines.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLog {
    pub header: RunHeader,
    pub decisions: Vec<Decision>,
}

impl DecisionLog {
    pub fn new(config: &EngineConfig, condition: AblationCondition, backend: crate::perception::BackendKind) -> Self {
        Self {
            header: RunHeader {
                schema_version: LOG_SCHEMA_VERSION,
                config_hash: config.config_hash(),
                seed: config.seed,
                condition,
                backend,
                deterministic: backend.is_deterministic(),
            },
            decisions: Vec::new(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = LogLine::Header(self.header.clone());
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for d in &self.decisions {
            out.push_str(&serde_json::to_string(&LogLine::Decision(Box::new(d.clone()))).expect("decision serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(self.to_jsonl().as_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut header = None;
        let mut decisions = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| LogError::Malformed { path: path.to_path_buf(), line: i + 1, reason };
            match serde_json::from_str::<LogLine>(&line).map_err(|e| malformed(e.to_string()))? {
                LogLine::Header(h) if header.is_none() => header = Some(h),
                LogLine::Header(_) => return Err(malformed("second header".into())),
                LogLine::Decision(_) if header.is_none() => return Err(LogError::MissingHeader(path.to_path_buf())),
                LogLine::Decision(d) => decisions.push(*d),
            }
        }
        let header = header.ok_or_else(|| LogError::MissingHeader(path.to_path_buf()))?;
        Ok(Self { header, decisions })
    }
}
