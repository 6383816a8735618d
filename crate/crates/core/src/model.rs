//! Domain types shared by every stage of the agent: the locomotion-mode
//! taxonomy, command types, perception scores and perception events.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown locomotion mode `{0}`")]
    UnknownMode(String),
    #[error("unknown command type `{0}`")]
    UnknownCommandType(String),
    #[error("non-finite {field} score: {value}")]
    NonFiniteScore { field: &'static str, value: f64 },
}

/// The twelve locomotion modes the agent predicts.
///
/// The short code (`CDwn`, `LGN`, ...) is the canonical serialization in every
/// file format and report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocomotionMode {
    ConstructionLadderDown,
    ConstructionLadderUp,
    VerticalLadderDown,
    VerticalLadderUp,
    LevelGround,
    LowSpace,
    SittingDown,
    StandingUp,
    StairAscension,
    StairDescension,
    SteppingOverBox,
    SteppingOverPipe,
}

impl LocomotionMode {
    pub const ALL: [LocomotionMode; 12] = [
        LocomotionMode::ConstructionLadderDown,
        LocomotionMode::ConstructionLadderUp,
        LocomotionMode::VerticalLadderDown,
        LocomotionMode::VerticalLadderUp,
        LocomotionMode::LevelGround,
        LocomotionMode::LowSpace,
        LocomotionMode::SittingDown,
        LocomotionMode::StandingUp,
        LocomotionMode::StairAscension,
        LocomotionMode::StairDescension,
        LocomotionMode::SteppingOverBox,
        LocomotionMode::SteppingOverPipe,
    ];

    pub fn code(self) -> &'static str {
        match self {
            LocomotionMode::ConstructionLadderDown => "CDwn",
            LocomotionMode::ConstructionLadderUp => "CUp",
            LocomotionMode::VerticalLadderDown => "VDwn",
            LocomotionMode::VerticalLadderUp => "VUp",
            LocomotionMode::LevelGround => "LGN",
            LocomotionMode::LowSpace => "LSN",
            LocomotionMode::SittingDown => "SD",
            LocomotionMode::StandingUp => "SU",
            LocomotionMode::StairAscension => "SAsc",
            LocomotionMode::StairDescension => "SDsc",
            LocomotionMode::SteppingOverBox => "SoB",
            LocomotionMode::SteppingOverPipe => "SoP",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LocomotionMode::ConstructionLadderDown => "Construction Ladder Down Climbing",
            LocomotionMode::ConstructionLadderUp => "Construction Ladder Up Climbing",
            LocomotionMode::VerticalLadderDown => "Vertical Ladder Down Climbing",
            LocomotionMode::VerticalLadderUp => "Vertical Ladder Up Climbing",
            LocomotionMode::LevelGround => "Level-Ground Navigation",
            LocomotionMode::LowSpace => "Low Space Navigation",
            LocomotionMode::SittingDown => "Sitting Down",
            LocomotionMode::StandingUp => "Standing Up",
            LocomotionMode::StairAscension => "Stair Ascension",
            LocomotionMode::StairDescension => "Stair Descension",
            LocomotionMode::SteppingOverBox => "Stepping over Box",
            LocomotionMode::SteppingOverPipe => "Stepping over Pipe",
        }
    }

    /// Position in [`LocomotionMode::ALL`]; used as the row/column index of
    /// confusion matrices.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Parses a code or a full name. Matching ignores case, surrounding
    /// whitespace, and differences in internal spacing, hyphens and underscores.
    pub fn parse_lenient(raw: &str) -> Result<Self, ModelError> {
        let wanted = normalize_label(raw);
        if wanted.is_empty() {
            return Err(ModelError::UnknownMode(raw.to_string()));
        }
        LocomotionMode::ALL
            .into_iter()
            .find(|m| normalize_label(m.code()) == wanted || normalize_label(m.name()) == wanted)
            .ok_or_else(|| ModelError::UnknownMode(raw.to_string()))
    }
}

fn normalize_label(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl fmt::Display for LocomotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LocomotionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LocomotionMode::parse_lenient(s)
    }
}

impl Serialize for LocomotionMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for LocomotionMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        LocomotionMode::ALL
            .into_iter()
            .find(|m| m.code() == raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown locomotion mode code `{raw}`")))
    }
}

/// How the spoken command relates to the intended mode. Evaluation metadata
/// only; never shown to a perception backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CommandType {
    Clear,
    Vague,
    SafetyCritical,
}

impl CommandType {
    pub const ALL: [CommandType; 3] = [CommandType::Clear, CommandType::Vague, CommandType::SafetyCritical];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandType::Clear => "Clear",
            CommandType::Vague => "Vague",
            CommandType::SafetyCritical => "SafetyCritical",
        }
    }
}

impl fmt::Display for CommandType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "clear" => Ok(CommandType::Clear),
            "vague" => Ok(CommandType::Vague),
            "safetycritical" | "safety" => Ok(CommandType::SafetyCritical),
            _ => Err(ModelError::UnknownCommandType(s.to_string())),
        }
    }
}

/// The four perception scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub vagueness: f64,
    pub discrepancy: f64,
    pub importance: f64,
    pub confidence: f64,
    /// Set when construction had to clamp at least one input into `[0, 1]`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

impl ScoreSet {
    pub fn new(vagueness: f64, discrepancy: f64, importance: f64, confidence: f64) -> Result<Self, ModelError> {
        clamp_scores(vagueness, discrepancy, importance, confidence)
    }
}

/// Clamps each raw score into `[0, 1]`, recording whether anything changed.
pub fn clamp_scores(vagueness: f64, discrepancy: f64, importance: f64, confidence: f64) -> Result<ScoreSet, ModelError> {
    let raw = [
        ("vagueness", vagueness),
        ("discrepancy", discrepancy),
        ("importance", importance),
        ("confidence", confidence),
    ];
    let mut out = [0.0; 4];
    let mut clamped = false;
    for (slot, (field, value)) in out.iter_mut().zip(raw) {
        if !value.is_finite() {
            return Err(ModelError::NonFiniteScore { field, value });
        }
        *slot = value.clamp(0.0, 1.0);
        clamped |= *slot != value;
    }
    Ok(ScoreSet {
        vagueness: out[0],
        discrepancy: out[1],
        importance: out[2],
        confidence: out[3],
        clamped,
    })
}

/// The set of modes treated as safety-critical by memory maintenance and
/// retrieval ranking. Defaults to ladders, low space, stairs and obstacles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyPartition {
    modes: BTreeSet<LocomotionMode>,
}

impl SafetyPartition {
    pub fn new(modes: impl IntoIterator<Item = LocomotionMode>) -> Self {
        Self { modes: modes.into_iter().collect() }
    }

    pub fn is_safety_critical(&self, mode: LocomotionMode) -> bool {
        self.modes.contains(&mode)
    }

    pub fn modes(&self) -> impl Iterator<Item = LocomotionMode> + '_ {
        self.modes.iter().copied()
    }
}

impl Default for SafetyPartition {
    fn default() -> Self {
        use LocomotionMode::*;
        Self::new([
            ConstructionLadderDown,
            ConstructionLadderUp,
            VerticalLadderDown,
            VerticalLadderUp,
            LowSpace,
            StairAscension,
            StairDescension,
            SteppingOverBox,
            SteppingOverPipe,
        ])
    }
}

/// Safety classification under the default partition.
pub fn mode_is_safety_critical(mode: LocomotionMode) -> bool {
    SafetyPartition::default().is_safety_critical(mode)
}

/// One fully scored perception output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionEvent {
    pub event_id: String,
    /// Seconds since episode start.
    pub timestamp: f64,
    pub mode: LocomotionMode,
    pub scores: ScoreSet,
    #[serde(default)]
    pub environment: String,
    #[serde(default)]
    pub primary_object: String,
    #[serde(default)]
    pub obstacles: Vec<String>,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub reasoning_trace: String,
    pub text_embedding: Vec<f64>,
    pub image_embedding: Vec<f64>,
    /// Event id this one was refined from, when produced by a refinement pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_from: Option<String>,
    /// Set when refinement was needed but failed and this original prediction
    /// was kept instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_clarity: bool,
}
