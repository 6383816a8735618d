//! Perception: prompt assembly, backend invocation, response parsing and
//! embeddings.
//!
//! A perception pass turns one spoken command plus its field-of-view frame
//! grid into a scored [`PerceptionEvent`]. The backend (mock, transcript
//! replay or a live chat-completions endpoint) only ever sees the prompt text
//! and the opaque frame reference; evaluation metadata such as the command
//! type stays on this side.

mod backend;
mod embed;
mod http;
mod parse;
mod prompt;

pub use backend::{
    BackendError, BackendKind, BackendRequest, KeyedScriptBackend, PerceptionBackend, RecordedRequest,
    ScriptedBackend, Stage, TranscriptBackend, TranscriptLine, TranscriptRecorder,
};
pub use embed::{cosine, l2_normalize, Embedder, HashEmbedder, UNIT_NORM_TOLERANCE};
pub use http::{HttpBackend, HttpBackendConfig};
pub use parse::{parse_perception_response, ResponseFragment, SceneFields};
pub use prompt::{
    assemble_perception_prompt, format_ltm_hit, LTM_SECTION_HEADER, NO_LTM_INSIGHTS, NO_RECENT_CONTEXT,
    OUTPUT_KEYS, STM_SECTION_HEADER,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CommandType, LocomotionMode, ModelError, PerceptionEvent, ScoreSet};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("command text is empty")]
    EmptyCommand,
    #[error("cannot embed empty input")]
    EmptyInput,
    #[error("frame has neither a reference nor a precomputed embedding")]
    EmptyFrame,
    #[error("no JSON object found in backend response")]
    NoJsonObject,
    #[error("backend response is missing `{0}`")]
    MissingField(&'static str),
    #[error("backend response field `{field}` is invalid: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("backend returned unknown locomotion mode `{value}`")]
    UnknownMode {
        value: String,
        /// The event as parsed, with the mode replaced by
        /// [`PROVISIONAL_MODE`] and vagueness forced to 1.0.
        provisional: Box<PerceptionEvent>,
    },
    #[error("embedding dimension {actual} does not match configured dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding is not unit-norm (norm {0})")]
    NotUnitNorm(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Mode placed on a provisional event when the backend's mode string could
/// not be resolved. Level-ground walking is the routine transitional state.
pub const PROVISIONAL_MODE: LocomotionMode = LocomotionMode::LevelGround;

/// Visual input for one command: an opaque frame-grid reference (forwarded to
/// live backends), a precomputed image embedding, or both.
///
/// The grid holds nine sequential frames spanning 1.5 s, from 0.25 s before
/// to 1.25 s after the command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl FrameRef {
    pub fn reference(reference: impl Into<String>) -> Self {
        Self { reference: Some(reference.into()), embedding: None }
    }

    pub fn embedding(embedding: Vec<f64>) -> Self {
        Self { reference: None, embedding: Some(embedding) }
    }

    pub fn is_empty(&self) -> bool {
        self.reference.as_deref().is_none_or(str::is_empty) && self.embedding.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionInput {
    pub event_id: String,
    pub command: String,
    pub frame: FrameRef,
    pub timestamp: f64,
    /// Evaluation metadata only; never passed to a backend.
    pub command_type: Option<CommandType>,
}

/// Request parameters forwarded to live backends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Runs one backend call for `input` with an already-assembled prompt and
/// turns the response into an event carrying `input`'s identity, timestamp
/// and embeddings.
pub(crate) fn complete_and_parse(
    backend: &mut dyn PerceptionBackend,
    embedder: &dyn Embedder,
    input: &PerceptionInput,
    stage: Stage,
    prompt: &str,
    params: GenerationParams,
    event_id: String,
) -> Result<PerceptionEvent, PerceptionError> {
    let request = BackendRequest {
        event_id: &input.event_id,
        stage,
        prompt,
        frame_ref: input.frame.reference.as_deref(),
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    };
    let raw = backend.complete(&request)?;
    let text_embedding = embedder.embed_text(&input.command)?;
    let image_embedding = embedder.embed_image(&input.frame)?;
    let build = |mode, scores, scene: SceneFields, reasoning| PerceptionEvent {
        event_id: event_id.clone(),
        timestamp: input.timestamp,
        mode,
        scores,
        environment: scene.environment,
        primary_object: scene.primary_object,
        obstacles: scene.obstacles,
        summary: scene.summary,
        reasoning_trace: reasoning,
        text_embedding: text_embedding.clone(),
        image_embedding: image_embedding.clone(),
        refined_from: None,
        low_clarity: false,
    };
    match parse::parse_response_fields(&raw)? {
        parse::ParsedResponse { mode: Ok(mode), scores, scene, reasoning } => Ok(build(mode, scores, scene, reasoning)),
        parse::ParsedResponse { mode: Err(value), scores, scene, reasoning } => {
            let scores = ScoreSet { vagueness: 1.0, ..scores };
            Err(PerceptionError::UnknownMode {
                value,
                provisional: Box::new(build(PROVISIONAL_MODE, scores, scene, reasoning)),
            })
        }
    }
}

/// Initial perception pass: assemble the prompt with the STM context, call
/// the backend, parse, and attach embeddings of the command text and frame.
pub fn perceive(
    backend: &mut dyn PerceptionBackend,
    embedder: &dyn Embedder,
    input: &PerceptionInput,
    stm_context: &[String],
    params: GenerationParams,
) -> Result<PerceptionEvent, PerceptionError> {
    let prompt = assemble_perception_prompt(input, stm_context)?;
    complete_and_parse(backend, embedder, input, Stage::Perception, &prompt, params, input.event_id.clone())
}
