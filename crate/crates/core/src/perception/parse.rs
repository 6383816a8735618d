use serde_json::{Map, Value};

use super::PerceptionError;
use crate::model::{clamp_scores, LocomotionMode, ScoreSet};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneFields {
    pub environment: String,
    pub primary_object: String,
    pub obstacles: Vec<String>,
    pub summary: String,
}

/// The parsed content of one backend response, before identity and
/// embeddings are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFragment {
    pub mode: LocomotionMode,
    pub scores: ScoreSet,
    pub scene: SceneFields,
    pub reasoning: String,
}

pub(crate) struct ParsedResponse {
    /// `Err` holds the unresolved mode string.
    pub mode: Result<LocomotionMode, String>,
    pub scores: ScoreSet,
    pub scene: SceneFields,
    pub reasoning: String,
}

/// Extracts the first JSON object in `raw` and maps it onto a fragment.
///
/// Scores are clamped into `[0, 1]`; scene fields are optional and default to
/// empty. An unrecognised mode string yields [`PerceptionError::UnknownMode`];
/// its provisional event carries no identity or embeddings.
pub fn parse_perception_response(raw: &str) -> Result<ResponseFragment, PerceptionError> {
    let parsed = parse_response_fields(raw)?;
    match parsed.mode {
        Ok(mode) => Ok(ResponseFragment { mode, scores: parsed.scores, scene: parsed.scene, reasoning: parsed.reasoning }),
        Err(value) => Err(PerceptionError::UnknownMode {
            provisional: Box::new(crate::model::PerceptionEvent {
                event_id: String::new(),
                timestamp: 0.0,
                mode: super::PROVISIONAL_MODE,
                scores: ScoreSet { vagueness: 1.0, ..parsed.scores },
                environment: parsed.scene.environment,
                primary_object: parsed.scene.primary_object,
                obstacles: parsed.scene.obstacles,
                summary: parsed.scene.summary,
                reasoning_trace: parsed.reasoning,
                text_embedding: Vec::new(),
                image_embedding: Vec::new(),
                refined_from: None,
                low_clarity: false,
            }),
            value,
        }),
    }
}

pub(crate) fn parse_response_fields(raw: &str) -> Result<ParsedResponse, PerceptionError> {
    let object = first_json_object(raw).ok_or(PerceptionError::NoJsonObject)?;

    let mode_value = object.get("locomotion_mode").ok_or(PerceptionError::MissingField("locomotion_mode"))?;
    let mode_text = mode_value.as_str().ok_or_else(|| PerceptionError::InvalidField {
        field: "locomotion_mode",
        reason: "expected a string".into(),
    })?;
    let mode = LocomotionMode::parse_lenient(mode_text).map_err(|_| mode_text.trim().to_string());

    let scores = clamp_scores(
        score(&object, "vagueness")?,
        score(&object, "discrepancy")?,
        score(&object, "importance")?,
        score(&object, "confidence")?,
    )?;

    let scene = SceneFields {
        environment: text(&object, "environment"),
        primary_object: text(&object, "primary_object"),
        obstacles: string_list(&object, "obstacles"),
        summary: text(&object, "summary"),
    };
    Ok(ParsedResponse { mode, scores, scene, reasoning: text(&object, "reasoning") })
}

/// Returns the first `{ ... }` in `raw` that parses as a JSON object. Models
/// often wrap their answer in prose or code fences.
fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(start, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn score(object: &Map<String, Value>, field: &'static str) -> Result<f64, PerceptionError> {
    match object.get(field) {
        None | Some(Value::Null) => Err(PerceptionError::MissingField(field)),
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| PerceptionError::InvalidField {
            field,
            reason: format!("{n} is not representable"),
        }),
        Some(Value::String(s)) => s.trim().parse::<f64>().map_err(|_| PerceptionError::InvalidField {
            field,
            reason: format!("`{s}` is not a number"),
        }),
        Some(other) => Err(PerceptionError::InvalidField { field, reason: format!("expected a number, got {other}") }),
    }
}

fn text(object: &Map<String, Value>, field: &str) -> String {
    match object.get(field) {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

fn string_list(object: &Map<String, Value>, field: &str) -> Vec<String> {
    match object.get(field) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.trim().to_string(),
                other => other.to_string(),
            })
            .filter(|s| !s.is_empty())
            .collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        _ => Vec::new(),
    }
}
