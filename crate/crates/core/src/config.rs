//! Engine configuration.
//!
//! The on-disk format is a flat `key = value` document, one key per line,
//! `#` comments allowed. Every key maps 1:1 onto an [`EngineConfig`] field.
//! Secrets are never read from files: the API key comes from the environment
//! variable named by `api_key_env`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gate::ClarityWeights;
use crate::ltm::LtmWeights;
use crate::model::{LocomotionMode, SafetyPartition};
use crate::perception::{BackendKind, GenerationParams, HttpBackendConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("invalid configuration `{key}`: {reason}")]
    Invariant { key: &'static str, reason: String },
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// What advances the clarity-threshold ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampBasis {
    /// Every processed event.
    AllEvents,
    /// Only events stored without refinement.
    UnrefinedEvents,
}

impl RampBasis {
    fn as_str(self) -> &'static str {
        match self {
            RampBasis::AllEvents => "all_events",
            RampBasis::UnrefinedEvents => "unrefined_events",
        }
    }
}

impl FromStr for RampBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_events" => Ok(RampBasis::AllEvents),
            "unrefined_events" => Ok(RampBasis::UnrefinedEvents),
            _ => Err("expected `all_events` or `unrefined_events`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub model: String,
    pub max_tokens: u32,
    pub perception_temperature: f64,
    pub refinement_temperature: f64,
    pub text_embedding_model: String,
    pub image_embedding_model: String,
    pub embedding_dim: usize,
    pub stm_retention_s: f64,
    pub ltm: LtmWeights,
    pub clarity: ClarityWeights,
    pub ramp_basis: RampBasis,
    pub persist_ltm_across_episodes: bool,
    pub backend: BackendKind,
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub embedding_seed: u64,
    pub ece_bins: usize,
    pub safety_modes: SafetyPartition,
    pub http_url: String,
    pub http_timeout_s: f64,
    pub api_key_env: String,
    /// Resolved from the environment; never written by [`EngineConfig::dump`].
    pub api_key: Option<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            max_tokens: 600,
            perception_temperature: 0.7,
            refinement_temperature: 0.5,
            text_embedding_model: "text-embedding-ada-002".into(),
            image_embedding_model: "openai/clip-vit-large-patch14".into(),
            embedding_dim: 768,
            stm_retention_s: 45.0,
            ltm: LtmWeights::default(),
            clarity: ClarityWeights::default(),
            ramp_basis: RampBasis::AllEvents,
            persist_ltm_across_episodes: true,
            backend: BackendKind::Mock,
            dataset: None,
            seed: 0,
            embedding_seed: 0,
            ece_bins: 10,
            safety_modes: SafetyPartition::default(),
            http_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            http_timeout_s: 60.0,
            api_key_env: "OPENAI_API_KEY".into(),
            api_key: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl EngineConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        match key {
            "model" => self.model = v.to_string(),
            "max_tokens" => self.max_tokens = parse(key, v)?,
            "perception_temperature" => self.perception_temperature = parse(key, v)?,
            "refinement_temperature" => self.refinement_temperature = parse(key, v)?,
            "text_embedding_model" => self.text_embedding_model = v.to_string(),
            "image_embedding_model" => self.image_embedding_model = v.to_string(),
            "embedding_dim" => self.embedding_dim = parse(key, v)?,
            "stm_retention_s" => self.stm_retention_s = parse(key, v)?,
            "ltm_top_k" => self.ltm.top_k = parse(key, v)?,
            "ltm_similarity_weight" => self.ltm.similarity = parse(key, v)?,
            "ltm_importance_weight" => self.ltm.importance = parse(key, v)?,
            "ltm_confidence_weight" => self.ltm.confidence = parse(key, v)?,
            "ltm_discrepancy_penalty_weight" => self.ltm.discrepancy_penalty = parse(key, v)?,
            "ltm_vagueness_penalty_weight" => self.ltm.vagueness_penalty = parse(key, v)?,
            "ltm_safety_penalty_reduction" => self.ltm.safety_penalty_reduction = parse(key, v)?,
            "ltm_safety_decay_rate" => self.ltm.decay_safety = parse(key, v)?,
            "ltm_routine_decay_rate" => self.ltm.decay_routine = parse(key, v)?,
            "ltm_prune_threshold" => self.ltm.prune_threshold = parse(key, v)?,
            "boost_amount" => self.ltm.boost_amount = parse(key, v)?,
            "clarity_vagueness_weight" => self.clarity.vagueness = parse(key, v)?,
            "clarity_discrepancy_weight" => self.clarity.discrepancy = parse(key, v)?,
            "clarity_confidence_weight" => self.clarity.confidence = parse(key, v)?,
            "clarity_threshold_min" => self.clarity.threshold_min = parse(key, v)?,
            "clarity_threshold_max" => self.clarity.threshold_max = parse(key, v)?,
            "clarity_ramp_per_cycle" => self.clarity.ramp_per_cycle = parse(key, v)?,
            "clarity_ramp_basis" => self.ramp_basis = parse(key, v)?,
            "persist_ltm_across_episodes" => self.persist_ltm_across_episodes = parse(key, v)?,
            "backend" => self.backend = parse(key, v)?,
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "seed" => self.seed = parse(key, v)?,
            "embedding_seed" => self.embedding_seed = parse(key, v)?,
            "ece_bins" => self.ece_bins = parse(key, v)?,
            "safety_modes" => {
                let modes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|code| parse::<LocomotionMode>(key, code))
                    .collect::<Result<Vec<_>, _>>()?;
                self.safety_modes = SafetyPartition::new(modes);
            }
            "http_url" => self.http_url = v.to_string(),
            "http_timeout_s" => self.http_timeout_s = parse(key, v)?,
            "api_key_env" => self.api_key_env = v.to_string(),
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Overlays a `key = value` document onto `self`.
    pub fn apply_document(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| ConfigError::Syntax { path: path.to_path_buf(), line: i + 1 })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn fail(key: &'static str, reason: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invariant { key, reason: reason.into() })
        }
        let non_negative = [
            ("perception_temperature", self.perception_temperature),
            ("refinement_temperature", self.refinement_temperature),
            ("stm_retention_s", self.stm_retention_s),
            ("ltm_similarity_weight", self.ltm.similarity),
            ("ltm_importance_weight", self.ltm.importance),
            ("ltm_confidence_weight", self.ltm.confidence),
            ("ltm_discrepancy_penalty_weight", self.ltm.discrepancy_penalty),
            ("ltm_vagueness_penalty_weight", self.ltm.vagueness_penalty),
            ("ltm_safety_penalty_reduction", self.ltm.safety_penalty_reduction),
            ("ltm_safety_decay_rate", self.ltm.decay_safety),
            ("ltm_routine_decay_rate", self.ltm.decay_routine),
            ("ltm_prune_threshold", self.ltm.prune_threshold),
            ("boost_amount", self.ltm.boost_amount),
            ("clarity_vagueness_weight", self.clarity.vagueness),
            ("clarity_discrepancy_weight", self.clarity.discrepancy),
            ("clarity_confidence_weight", self.clarity.confidence),
            ("clarity_threshold_min", self.clarity.threshold_min),
            ("clarity_threshold_max", self.clarity.threshold_max),
            ("clarity_ramp_per_cycle", self.clarity.ramp_per_cycle),
            ("http_timeout_s", self.http_timeout_s),
        ];
        for (key, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return fail(key, format!("must be a non-negative number, got {value}"));
            }
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim", "must be at least 1");
        }
        if self.max_tokens == 0 {
            return fail("max_tokens", "must be at least 1");
        }
        if self.ltm.top_k == 0 {
            return fail("ltm_top_k", "must be at least 1");
        }
        if self.ece_bins == 0 {
            return fail("ece_bins", "must be at least 1");
        }
        if self.clarity.threshold_min > self.clarity.threshold_max {
            return fail(
                "clarity_threshold_min",
                format!(
                    "{} exceeds clarity_threshold_max {}",
                    self.clarity.threshold_min, self.clarity.threshold_max
                ),
            );
        }
        let clarity_sum = self.clarity.vagueness + self.clarity.discrepancy + self.clarity.confidence;
        if (clarity_sum - 1.0).abs() > 1e-9 {
            return fail("clarity_vagueness_weight", format!("clarity weights sum to {clarity_sum}, expected 1"));
        }
        let ltm_sum = self.ltm.similarity + self.ltm.importance + self.ltm.confidence;
        if (ltm_sum - 1.0).abs() > 1e-9 {
            log::warn!("LTM similarity/importance/confidence weights sum to {ltm_sum}, not 1");
        }
        Ok(())
    }

    /// Serializes every non-secret key in load order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("model", self.model.clone());
        kv("max_tokens", self.max_tokens.to_string());
        kv("perception_temperature", self.perception_temperature.to_string());
        kv("refinement_temperature", self.refinement_temperature.to_string());
        kv("text_embedding_model", self.text_embedding_model.clone());
        kv("image_embedding_model", self.image_embedding_model.clone());
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("stm_retention_s", self.stm_retention_s.to_string());
        kv("ltm_top_k", self.ltm.top_k.to_string());
        kv("ltm_similarity_weight", self.ltm.similarity.to_string());
        kv("ltm_importance_weight", self.ltm.importance.to_string());
        kv("ltm_confidence_weight", self.ltm.confidence.to_string());
        kv("ltm_discrepancy_penalty_weight", self.ltm.discrepancy_penalty.to_string());
        kv("ltm_vagueness_penalty_weight", self.ltm.vagueness_penalty.to_string());
        kv("ltm_safety_penalty_reduction", self.ltm.safety_penalty_reduction.to_string());
        kv("ltm_safety_decay_rate", self.ltm.decay_safety.to_string());
        kv("ltm_routine_decay_rate", self.ltm.decay_routine.to_string());
        kv("ltm_prune_threshold", self.ltm.prune_threshold.to_string());
        kv("boost_amount", self.ltm.boost_amount.to_string());
        kv("clarity_vagueness_weight", self.clarity.vagueness.to_string());
        kv("clarity_discrepancy_weight", self.clarity.discrepancy.to_string());
        kv("clarity_confidence_weight", self.clarity.confidence.to_string());
        kv("clarity_threshold_min", self.clarity.threshold_min.to_string());
        kv("clarity_threshold_max", self.clarity.threshold_max.to_string());
        kv("clarity_ramp_per_cycle", self.clarity.ramp_per_cycle.to_string());
        kv("clarity_ramp_basis", self.ramp_basis.as_str().to_string());
        kv("persist_ltm_across_episodes", self.persist_ltm_across_episodes.to_string());
        kv("backend", self.backend.as_str().to_string());
        kv("dataset", self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("seed", self.seed.to_string());
        kv("embedding_seed", self.embedding_seed.to_string());
        kv("ece_bins", self.ece_bins.to_string());
        kv("safety_modes", self.safety_modes.modes().map(LocomotionMode::code).collect::<Vec<_>>().join(","));
        kv("http_url", self.http_url.clone());
        kv("http_timeout_s", self.http_timeout_s.to_string());
        kv("api_key_env", self.api_key_env.clone());
        out
    }

    /// SHA-256 of [`EngineConfig::dump`], hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.dump().as_bytes()))
    }

    pub fn perception_params(&self) -> GenerationParams {
        GenerationParams { temperature: self.perception_temperature, max_tokens: self.max_tokens }
    }

    pub fn refinement_params(&self) -> GenerationParams {
        GenerationParams { temperature: self.refinement_temperature, max_tokens: self.max_tokens }
    }

    pub fn http_backend_config(&self) -> HttpBackendConfig {
        HttpBackendConfig {
            url: self.http_url.clone(),
            model: self.model.clone(),
            api_key: self.api_key.clone(),
            timeout: Duration::from_secs_f64(self.http_timeout_s),
        }
    }
}

/// Defaults, overlaid with the file at `path` (if any), then the API key from
/// the environment, then `overrides` (CLI flags) in order. The result is
/// validated.
pub fn load_config(path: Option<&Path>, overrides: &[(&str, String)]) -> Result<EngineConfig, ConfigError> {
    let mut config = EngineConfig::default();
    if let Some(path) = path {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        config.apply_document(&text, path)?;
    }
    for (key, value) in overrides {
        config.set(key, value)?;
    }
    config.api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
    config.validate()?;
    Ok(config)
}
