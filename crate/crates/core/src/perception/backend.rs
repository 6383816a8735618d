use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport failed: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    MalformedReply(String),
    #[error("backend has no response left for event `{0}`")]
    Exhausted(String),
    #[error("transcript expected event `{expected}` but the pipeline asked for `{actual}`")]
    OutOfOrder { expected: String, actual: String },
    #[error("transcript {path}, line {line}: {reason}")]
    Transcript { path: PathBuf, line: usize, reason: String },
    #[error("backend i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Transcript,
    Http,
}

impl BackendKind {
    /// Whether repeated runs with the same inputs produce the same responses.
    pub fn is_deterministic(self) -> bool {
        !matches!(self, BackendKind::Http)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Mock => "mock",
            BackendKind::Transcript => "transcript",
            BackendKind::Http => "http",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "transcript" => Ok(BackendKind::Transcript),
            "http" => Ok(BackendKind::Http),
            _ => Err("expected mock, transcript or http".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Perception,
    Refinement,
}

/// One call to a perception backend.
///
/// `event_id` identifies the call for replay bookkeeping; model-facing
/// backends only consume `prompt` and `frame_ref`.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub event_id: &'a str,
    pub stage: Stage,
    pub prompt: &'a str,
    pub frame_ref: Option<&'a str>,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait PerceptionBackend: Send {
    fn kind(&self) -> BackendKind;
    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError>;
}

impl<B: PerceptionBackend + ?Sized> PerceptionBackend for Box<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Owned copy of a request, kept by test backends.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub event_id: String,
    pub stage: Stage,
    pub prompt: String,
    pub frame_ref: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl From<&BackendRequest<'_>> for RecordedRequest {
    fn from(r: &BackendRequest<'_>) -> Self {
        Self {
            event_id: r.event_id.to_string(),
            stage: r.stage,
            prompt: r.prompt.to_string(),
            frame_ref: r.frame_ref.map(str::to_string),
            temperature: r.temperature,
            max_tokens: r.max_tokens,
        }
    }
}

/// Mock backend answering from a fixed queue, in call order. An `Err` entry
/// simulates a transport failure.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: VecDeque<Result<String, String>>,
    requests: Vec<RecordedRequest>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::from_results(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn from_results(responses: impl IntoIterator<Item = Result<String, String>>) -> Self {
        Self { queue: responses.into_iter().collect(), requests: Vec::new() }
    }

    pub fn push(&mut self, response: impl Into<String>) {
        self.queue.push_back(Ok(response.into()));
    }

    pub fn requests(&self) -> &[RecordedRequest] {
        &self.requests
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl PerceptionBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        self.requests.push(request.into());
        match self.queue.pop_front() {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(BackendError::Transport(e)),
            None => Err(BackendError::Exhausted(request.event_id.to_string())),
        }
    }
}

/// Mock backend answering by `(event_id, stage)` lookup, independent of call
/// order. Used to replay per-record scripted responses from a dataset.
#[derive(Debug, Default, Clone)]
pub struct KeyedScriptBackend {
    responses: BTreeMap<(String, Stage), String>,
}

impl KeyedScriptBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, event_id: impl Into<String>, stage: Stage, response: impl Into<String>) {
        self.responses.insert((event_id.into(), stage), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl PerceptionBackend for KeyedScriptBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        self.responses
            .get(&(request.event_id.to_string(), request.stage))
            .cloned()
            .ok_or_else(|| BackendError::Exhausted(request.event_id.to_string()))
    }
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub event_id: String,
    pub raw_response: String,
}

/// Replays recorded raw responses from a JSON-lines transcript, consumed in
/// order. Each call must name the event the next line was recorded for.
#[derive(Debug)]
pub struct TranscriptBackend {
    lines: VecDeque<TranscriptLine>,
}

impl TranscriptBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut lines = VecDeque::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine = serde_json::from_str(&line).map_err(|e| BackendError::Transcript {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            lines.push_back(parsed);
        }
        Ok(Self { lines })
    }

    pub fn from_lines(lines: impl IntoIterator<Item = TranscriptLine>) -> Self {
        Self { lines: lines.into_iter().collect() }
    }

    pub fn remaining(&self) -> usize {
        self.lines.len()
    }
}

impl PerceptionBackend for TranscriptBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Transcript
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let next = self.lines.front().ok_or_else(|| BackendError::Exhausted(request.event_id.to_string()))?;
        if next.event_id != request.event_id {
            return Err(BackendError::OutOfOrder { expected: next.event_id.clone(), actual: request.event_id.to_string() });
        }
        Ok(self.lines.pop_front().map(|l| l.raw_response).unwrap_or_default())
    }
}

/// Wraps a backend and appends every successful response to a transcript
/// file, so live runs can be replayed later.
pub struct TranscriptRecorder<B> {
    inner: B,
    out: BufWriter<File>,
}

impl<B: PerceptionBackend> TranscriptRecorder<B> {
    pub fn create(inner: B, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        Ok(Self { inner, out: BufWriter::new(File::create(path)?) })
    }

    pub fn into_inner(mut self) -> Result<B, BackendError> {
        self.out.flush()?;
        Ok(self.inner)
    }
}

impl<B: PerceptionBackend> PerceptionBackend for TranscriptRecorder<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let raw = self.inner.complete(request)?;
        let line = TranscriptLine { event_id: request.event_id.to_string(), raw_response: raw.clone() };
        let json = serde_json::to_string(&line).map_err(|e| BackendError::MalformedReply(e.to_string()))?;
        writeln!(self.out, "{json}")?;
        self.out.flush()?;
        Ok(raw)
    }
}
