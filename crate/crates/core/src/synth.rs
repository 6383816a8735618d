//! Seeded synthetic corpora and the oracle backend bound to them.
//!
//! The oracle answers from the prompt it is given. Its perception accuracy
//! rises only when the STM block of the prompt names the true previous mode,
//! and a refinement corrects a wrong answer only when the LTM block lists the
//! true mode. Memory effects therefore flow through the real prompt assembly.
//! All draws are keyed by `(seed, event_id, purpose)`, so every condition
//! sees the same random numbers for the same event.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::{EpisodeRecord, DATASET_SCHEMA_VERSION};
use crate::hashing::{seeded_hash, unit_interval};
use crate::model::{mode_is_safety_critical, CommandType, LocomotionMode};
use crate::perception::{
    BackendError, BackendKind, BackendRequest, PerceptionBackend, Stage, LTM_SECTION_HEADER, STM_SECTION_HEADER,
};

use LocomotionMode::*;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic parameter {key}: {reason}")]
    InvalidParam { key: &'static str, reason: String },
    #[error("oracle file {path}: {reason}")]
    OracleFile { path: PathBuf, reason: String },
    #[error("n_events must be at least 1")]
    NoEvents,
}

/// A value per command type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerType {
    pub clear: f64,
    pub vague: f64,
    pub safety_critical: f64,
}

impl PerType {
    pub fn get(&self, t: CommandType) -> f64 {
        match t {
            CommandType::Clear => self.clear,
            CommandType::Vague => self.vague,
            CommandType::SafetyCritical => self.safety_critical,
        }
    }
}

/// Beta-distributed scores for one correctness stratum, given as means plus
/// a shared concentration (`alpha + beta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub vagueness_mean: f64,
    pub discrepancy_mean: f64,
    pub confidence_mean: f64,
    pub concentration: f64,
    pub confidence_concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOracleParams {
    /// Probability of a correct initial prediction without usable context.
    pub base_accuracy: PerType,
    /// Added to the base accuracy when the latest STM line names the true
    /// previous mode.
    pub stm_bonus: PerType,
    /// Probability that refinement fixes a wrong prediction when an LTM hit
    /// carries the true mode.
    pub ltm_fix_prob: f64,
    pub correct_scores: ScoreDistribution,
    pub incorrect_scores: ScoreDistribution,
    pub importance_safety_mean: f64,
    pub importance_routine_mean: f64,
    /// Command-type weights for safety-critical modes.
    pub safety_mode_type_mix: PerType,
    /// Command-type weights for routine modes (`safety_critical` is ignored).
    pub routine_mode_type_mix: PerType,
    /// Probability that a wrong answer is the mode's usual confusion rather
    /// than a uniform pick.
    pub confusion_strength: f64,
    pub confusion_map: BTreeMap<LocomotionMode, LocomotionMode>,
    /// Number of tasks per episode, each preceded by level-ground walking.
    pub tasks_per_episode: (u32, u32),
    /// Chance of one more level-ground event after each one.
    pub extra_lgn_prob: f64,
    pub gap_s: (f64, f64),
}

impl Default for SynthOracleParams {
    fn default() -> Self {
        let confusion_map = [
            (ConstructionLadderDown, VerticalLadderDown),
            (ConstructionLadderUp, VerticalLadderUp),
            (VerticalLadderDown, ConstructionLadderDown),
            (VerticalLadderUp, ConstructionLadderUp),
            (LevelGround, SteppingOverPipe),
            (LowSpace, LevelGround),
            (SittingDown, StandingUp),
            (StandingUp, SittingDown),
            (StairAscension, ConstructionLadderUp),
            (StairDescension, ConstructionLadderDown),
            (SteppingOverBox, LevelGround),
            (SteppingOverPipe, LevelGround),
        ]
        .into_iter()
        .collect();
        Self {
            base_accuracy: PerType { clear: 0.79, vague: 0.69, safety_critical: 0.38 },
            stm_bonus: PerType { clear: 0.08, vague: 0.22, safety_critical: 0.06 },
            ltm_fix_prob: 0.7,
            correct_scores: ScoreDistribution {
                vagueness_mean: 0.142,
                discrepancy_mean: 0.095,
                confidence_mean: 0.940,
                concentration: 20.0,
                confidence_concentration: 60.0,
            },
            incorrect_scores: ScoreDistribution {
                vagueness_mean: 0.266,
                discrepancy_mean: 0.542,
                confidence_mean: 0.920,
                concentration: 20.0,
                confidence_concentration: 60.0,
            },
            importance_safety_mean: 0.75,
            importance_routine_mean: 0.3,
            safety_mode_type_mix: PerType { clear: 0.35, vague: 0.3, safety_critical: 0.35 },
            routine_mode_type_mix: PerType { clear: 0.55, vague: 0.45, safety_critical: 0.0 },
            confusion_strength: 0.7,
            confusion_map,
            tasks_per_episode: (2, 4),
            extra_lgn_prob: 0.05,
            gap_s: (2.0, 12.0),
        }
    }
}

impl SynthOracleParams {
    /// Every command clear and every answer correct.
    pub fn perfect() -> Self {
        Self {
            base_accuracy: PerType { clear: 1.0, vague: 1.0, safety_critical: 1.0 },
            safety_mode_type_mix: PerType { clear: 1.0, vague: 0.0, safety_critical: 0.0 },
            routine_mode_type_mix: PerType { clear: 1.0, vague: 0.0, safety_critical: 0.0 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        fn bad(key: &'static str, reason: impl Into<String>) -> Result<(), SynthError> {
            Err(SynthError::InvalidParam { key, reason: reason.into() })
        }
        let probs = [
            ("base_accuracy.clear", self.base_accuracy.clear),
            ("base_accuracy.vague", self.base_accuracy.vague),
            ("base_accuracy.safety_critical", self.base_accuracy.safety_critical),
            ("stm_bonus.clear", self.stm_bonus.clear),
            ("stm_bonus.vague", self.stm_bonus.vague),
            ("stm_bonus.safety_critical", self.stm_bonus.safety_critical),
            ("ltm_fix_prob", self.ltm_fix_prob),
            ("confusion_strength", self.confusion_strength),
            ("extra_lgn_prob", self.extra_lgn_prob),
        ];
        for (key, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(key, format!("{p} is not a probability"));
            }
        }
        if self.extra_lgn_prob >= 1.0 {
            return bad("extra_lgn_prob", "must be below 1");
        }
        for (stratum, d) in [("correct_scores", &self.correct_scores), ("incorrect_scores", &self.incorrect_scores)] {
            for m in [d.vagueness_mean, d.discrepancy_mean, d.confidence_mean] {
                if !(m > 0.0 && m < 1.0) {
                    return bad("score mean", format!("{stratum} mean {m} must lie strictly inside (0, 1)"));
                }
            }
            if !(d.concentration > 0.0 && d.confidence_concentration > 0.0) {
                return bad("concentration", format!("{stratum} concentrations must be positive"));
            }
        }
        for m in [self.importance_safety_mean, self.importance_routine_mean] {
            if !(m > 0.0 && m < 1.0) {
                return bad("importance mean", format!("{m} must lie strictly inside (0, 1)"));
            }
        }
        for (key, mix) in [("safety_mode_type_mix", &self.safety_mode_type_mix), ("routine_mode_type_mix", &self.routine_mode_type_mix)] {
            let ws = [mix.clear, mix.vague, mix.safety_critical];
            if ws.iter().any(|w| *w < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
                return bad(key, "weights must be non-negative with a positive sum");
            }
        }
        if self.routine_mode_type_mix.clear + self.routine_mode_type_mix.vague <= 0.0 {
            return bad("routine_mode_type_mix", "routine modes need clear or vague weight");
        }
        let (lo, hi) = self.tasks_per_episode;
        if lo < 1 || lo > hi {
            return bad("tasks_per_episode", format!("({lo}, {hi}) must be an ordered range starting at 1 or more"));
        }
        let (lo, hi) = self.gap_s;
        if !(lo > 0.0 && lo <= hi && hi <= crate::stm::DEFAULT_RETENTION_S) {
            return bad("gap_s", format!("({lo}, {hi}) must be ordered, positive and within the STM window"));
        }
        for (from, to) in &self.confusion_map {
            if from == to {
                return bad("confusion_map", format!("{from} maps to itself"));
            }
        }
        Ok(())
    }
}

/// What the oracle knows about one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEvent {
    pub event_id: String,
    pub ground_truth: LocomotionMode,
    pub command_type: CommandType,
    pub previous_truth: Option<LocomotionMode>,
    pub environment: String,
    pub primary_object: String,
}

/// Mock backend bound to a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub seed: u64,
    pub params: SynthOracleParams,
    events: BTreeMap<String, OracleEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OracleAnswer {
    mode: LocomotionMode,
    correct: bool,
}

impl SyntheticOracle {
    pub fn new(seed: u64, params: SynthOracleParams, events: impl IntoIterator<Item = OracleEvent>) -> Self {
        let events = events.into_iter().map(|e| (e.event_id.clone(), e)).collect();
        Self { seed, params, events }
    }

    pub fn event(&self, id: &str) -> Option<&OracleEvent> {
        self.events.get(id)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("oracle serializes");
        fs::write(path, text + "\n")
            .map_err(|e| SynthError::OracleFile { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let err = |reason: String| SynthError::OracleFile { path: path.to_path_buf(), reason };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let oracle: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        oracle.params.validate()?;
        Ok(oracle)
    }

    fn draw(&self, event_id: &str, purpose: &str) -> f64 {
        unit_interval(seeded_hash(self.seed, &[event_id, purpose]))
    }

    fn rng(&self, event_id: &str, purpose: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seeded_hash(self.seed, &[event_id, purpose]))
    }

    fn wrong_mode(&self, ev: &OracleEvent) -> LocomotionMode {
        let usual = self.params.confusion_map.get(&ev.ground_truth).copied();
        if let Some(m) = usual.filter(|_| self.draw(&ev.event_id, "confusion") < self.params.confusion_strength) {
            return m;
        }
        let others: Vec<_> = LocomotionMode::ALL.into_iter().filter(|m| *m != ev.ground_truth).collect();
        let i = (self.draw(&ev.event_id, "confusion-pick") * others.len() as f64) as usize;
        others[i.min(others.len() - 1)]
    }

    fn initial_answer(&self, ev: &OracleEvent, prompt: &str) -> OracleAnswer {
        let context_ok = ev.previous_truth.is_some_and(|prev| {
            let marker = format!(": {} in a ", prev.name());
            section(prompt, STM_SECTION_HEADER).lines().rev().find(|l| l.starts_with("- ")).is_some_and(|l| l.contains(&marker))
        });
        let t = ev.command_type;
        let mut p = self.params.base_accuracy.get(t);
        if context_ok {
            p += self.params.stm_bonus.get(t);
        }
        let correct = self.draw(&ev.event_id, "perception") < p.min(1.0);
        let mode = if correct { ev.ground_truth } else { self.wrong_mode(ev) };
        OracleAnswer { mode, correct }
    }

    fn refined_answer(&self, ev: &OracleEvent, prompt: &str) -> OracleAnswer {
        let initial = self.initial_answer(ev, prompt);
        if initial.correct {
            return initial;
        }
        let marker = format!("({}):", ev.ground_truth.code());
        let truth_retrieved = section(prompt, LTM_SECTION_HEADER).contains(&marker);
        if truth_retrieved && self.draw(&ev.event_id, "refinement") < self.params.ltm_fix_prob {
            OracleAnswer { mode: ev.ground_truth, correct: true }
        } else {
            initial
        }
    }

    fn reply(&self, ev: &OracleEvent, stage: Stage, answer: OracleAnswer) -> String {
        let purpose = match stage {
            Stage::Perception => "scores/perception",
            Stage::Refinement => "scores/refinement",
        };
        let mut rng = self.rng(&ev.event_id, purpose);
        let dist = if answer.correct { &self.params.correct_scores } else { &self.params.incorrect_scores };
        let vagueness = beta(&mut rng, dist.vagueness_mean, dist.concentration);
        let discrepancy = beta(&mut rng, dist.discrepancy_mean, dist.concentration);
        let confidence = beta(&mut rng, dist.confidence_mean, dist.confidence_concentration);
        let importance_mean = if mode_is_safety_critical(ev.ground_truth) {
            self.params.importance_safety_mean
        } else {
            self.params.importance_routine_mean
        };
        let importance = beta(&mut rng, importance_mean, 20.0);
        json!({
            "reasoning": format!("The frames show a {} in a {} environment.", ev.primary_object, ev.environment),
            "locomotion_mode": answer.mode.code(),
            "vagueness": vagueness,
            "discrepancy": discrepancy,
            "importance": importance,
            "confidence": confidence,
            "environment": ev.environment,
            "primary_object": ev.primary_object,
            "obstacles": [],
            "summary": format!("{} near the {}", answer.mode.name(), ev.primary_object),
        })
        .to_string()
    }
}

impl PerceptionBackend for SyntheticOracle {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let ev = self
            .events
            .get(request.event_id)
            .ok_or_else(|| BackendError::MalformedReply(format!("oracle has no event `{}`", request.event_id)))?;
        let answer = match request.stage {
            Stage::Perception => self.initial_answer(ev, request.prompt),
            Stage::Refinement => self.refined_answer(ev, request.prompt),
        };
        Ok(self.reply(ev, request.stage, answer))
    }
}

/// The body of a `## ` section, up to the next section header.
fn section<'a>(prompt: &'a str, header: &str) -> &'a str {
    let Some(start) = prompt.find(header) else { return "" };
    let body = &prompt[start + header.len()..];
    match body.find("\n## ") {
        Some(end) => &body[..end],
        None => body,
    }
}

fn beta(rng: &mut ChaCha8Rng, mean: f64, concentration: f64) -> f64 {
    Beta::new(mean * concentration, (1.0 - mean) * concentration).expect("validated beta parameters").sample(rng)
}

/// A generated dataset together with its oracle.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<EpisodeRecord>,
    pub oracle: SyntheticOracle,
}

/// Task blocks between stretches of level-ground walking.
const TASKS: &[&[LocomotionMode]] = &[
    &[ConstructionLadderUp, ConstructionLadderDown],
    &[VerticalLadderUp, VerticalLadderDown],
    &[StairAscension],
    &[StairDescension],
    &[SteppingOverBox],
    &[SteppingOverPipe],
    &[LowSpace],
    &[SittingDown, StandingUp],
];

fn commands(mode: LocomotionMode, t: CommandType) -> &'static [&'static str] {
    use CommandType::*;
    match (mode, t) {
        (ConstructionLadderUp, Clear) => &["I'm going to climb up the construction ladder", "Climbing up the A-frame ladder now"],
        (ConstructionLadderUp, Vague) => &["I'm going up", "Up we go"],
        (ConstructionLadderUp, SafetyCritical) => &["Careful, I'm getting on the ladder", "Hold it steady for me"],
        (ConstructionLadderDown, Clear) => &["I'm climbing down the construction ladder", "Going down the A-frame ladder"],
        (ConstructionLadderDown, Vague) => &["I'm heading down", "Time to come down"],
        (ConstructionLadderDown, SafetyCritical) => &["Watch my footing, I'm coming off the ladder", "Careful, it's wobbling"],
        (VerticalLadderUp, Clear) => &["I'm going to climb the vertical ladder", "Climbing up the fixed wall ladder"],
        (VerticalLadderUp, Vague) => &["Going up there", "I'll head up"],
        (VerticalLadderUp, SafetyCritical) => &["Hold on, I'm grabbing the rungs", "Careful, it's a long way up"],
        (VerticalLadderDown, Clear) => &["Climbing down the vertical ladder", "I'm going down the fixed wall ladder"],
        (VerticalLadderDown, Vague) => &["Heading back down", "Going down now"],
        (VerticalLadderDown, SafetyCritical) => &["Careful, the rungs are slippery", "Watch below me"],
        (LevelGround, Clear) => &["I'm walking forward on flat ground", "Walking straight ahead"],
        (LevelGround, _) => &["Let's go", "Moving on"],
        (LowSpace, Clear) => &["I'm crouching to get through the low space", "Ducking under the low ceiling"],
        (LowSpace, Vague) => &["Going through here", "I'll squeeze in"],
        (LowSpace, SafetyCritical) => &["Mind my head, it's tight here", "Careful, not much room"],
        (SittingDown, Clear) => &["I'm going to sit down on the chair", "Sitting down now"],
        (SittingDown, _) => &["I need a break", "Going down here"],
        (StandingUp, Clear) => &["I'm standing up from the chair", "Getting up from my seat"],
        (StandingUp, _) => &["Okay, up", "Let's get going again"],
        (StairAscension, Clear) => &["I'm walking up the stairs", "Going up the staircase"],
        (StairAscension, Vague) => &["Heading up", "I'm going up"],
        (StairAscension, SafetyCritical) => &["Careful, the steps are steep", "Hold the rail for me"],
        (StairDescension, Clear) => &["I'm walking down the stairs", "Going down the staircase"],
        (StairDescension, Vague) => &["Heading down", "Down I go"],
        (StairDescension, SafetyCritical) => &["Watch out, the stairs are wet", "Careful going down"],
        (SteppingOverBox, Clear) => &["I'm stepping over the box", "Stepping over the box in front of me"],
        (SteppingOverBox, Vague) => &["Let me get past this", "Over here"],
        (SteppingOverBox, SafetyCritical) => &["Watch out, something is in my way", "Careful, don't trip"],
        (SteppingOverPipe, Clear) => &["I'm stepping over the pipe", "Stepping over the pipe on the floor"],
        (SteppingOverPipe, Vague) => &["Let me get across", "Just passing through"],
        (SteppingOverPipe, SafetyCritical) => &["Careful, there's something on the floor", "Watch my feet"],
    }
}

fn scenes(mode: LocomotionMode) -> (&'static [&'static str], &'static str) {
    match mode {
        ConstructionLadderUp | ConstructionLadderDown => (&["construction site", "scaffolded"], "A-frame ladder"),
        VerticalLadderUp | VerticalLadderDown => (&["industrial", "rooftop"], "vertical ladder"),
        LevelGround => (&["indoor", "outdoor", "corridor"], "walkway"),
        LowSpace => (&["indoor", "basement"], "low ceiling"),
        SittingDown | StandingUp => (&["office", "break room"], "chair"),
        StairAscension | StairDescension => (&["stairwell", "indoor"], "staircase"),
        SteppingOverBox => (&["warehouse", "construction site"], "box"),
        SteppingOverPipe => (&["plant room", "construction site"], "pipe"),
    }
}

struct Draws {
    seed: u64,
    counter: u64,
}

impl Draws {
    fn next(&mut self, purpose: &str) -> f64 {
        self.counter += 1;
        unit_interval(seeded_hash(self.seed, &["generate", purpose, &self.counter.to_string()]))
    }

    fn pick<'a, T>(&mut self, purpose: &str, items: &'a [T]) -> &'a T {
        let i = (self.next(purpose) * items.len() as f64) as usize;
        &items[i.min(items.len() - 1)]
    }

    fn range(&mut self, purpose: &str, (lo, hi): (f64, f64)) -> f64 {
        lo + (hi - lo) * self.next(purpose)
    }
}

fn command_type(draws: &mut Draws, params: &SynthOracleParams, mode: LocomotionMode) -> CommandType {
    let mix = if mode_is_safety_critical(mode) {
        params.safety_mode_type_mix
    } else {
        PerType { safety_critical: 0.0, ..params.routine_mode_type_mix }
    };
    let total = mix.clear + mix.vague + mix.safety_critical;
    let u = draws.next("command-type") * total;
    if u < mix.clear {
        CommandType::Clear
    } else if u < mix.clear + mix.vague || mix.safety_critical == 0.0 {
        CommandType::Vague
    } else {
        CommandType::SafetyCritical
    }
}

fn episode_modes(draws: &mut Draws, params: &SynthOracleParams) -> Vec<LocomotionMode> {
    let (lo, hi) = params.tasks_per_episode;
    let n_tasks = lo + ((draws.next("tasks") * f64::from(hi - lo + 1)) as u32).min(hi - lo);
    let mut modes = Vec::new();
    let walk = |modes: &mut Vec<LocomotionMode>, draws: &mut Draws| {
        modes.push(LevelGround);
        while draws.next("extra-lgn") < params.extra_lgn_prob {
            modes.push(LevelGround);
        }
    };
    for _ in 0..n_tasks {
        walk(&mut modes, draws);
        modes.extend_from_slice(draws.pick("task", TASKS));
    }
    modes
}

/// Generates `n_events` events in whole episodes (the last one truncated)
/// plus the oracle answering for them.
pub fn synth_generate(seed: u64, n_events: usize, params: &SynthOracleParams) -> Result<SynthCorpus, SynthError> {
    if n_events == 0 {
        return Err(SynthError::NoEvents);
    }
    params.validate()?;
    let mut draws = Draws { seed, counter: 0 };
    let mut records = Vec::with_capacity(n_events);
    let mut oracle_events = Vec::with_capacity(n_events);
    let mut episode = 0usize;
    while records.len() < n_events {
        let episode_id = format!("ep{episode:04}");
        let mut t = 0.0;
        let mut previous = None;
        for (i, mode) in episode_modes(&mut draws, params).into_iter().enumerate() {
            if records.len() == n_events {
                break;
            }
            if i > 0 {
                t += draws.range("gap", params.gap_s);
            }
            // Round to the millisecond so timestamps survive JSON unchanged.
            let t_ms = (t * 1000.0).round() / 1000.0;
            let ct = command_type(&mut draws, params, mode);
            let command = *draws.pick("command", commands(mode, ct));
            let (envs, object) = scenes(mode);
            let environment = *draws.pick("environment", envs);
            let view = (draws.next("view") * 1000.0) as u32;
            let event_id = format!("{episode_id}-{i:03}");
            records.push(EpisodeRecord {
                schema_version: DATASET_SCHEMA_VERSION,
                event_id: event_id.clone(),
                episode_id: episode_id.clone(),
                timestamp: t_ms,
                command: command.to_string(),
                command_type: ct,
                ground_truth_mode: mode,
                frame_ref: Some(format!("{}; {environment}; {object}; view {view}", mode.name())),
                image_embedding: None,
                scripted_responses: BTreeMap::new(),
            });
            oracle_events.push(OracleEvent {
                event_id,
                ground_truth: mode,
                command_type: ct,
                previous_truth: previous,
                environment: environment.to_string(),
                primary_object: object.to_string(),
            });
            previous = Some(mode);
        }
        episode += 1;
    }
    Ok(SynthCorpus { records, oracle: SyntheticOracle::new(seed, params.clone(), oracle_events) })
}
