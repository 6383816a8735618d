//! Clarity gate and refinement pass.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{LocomotionMode, PerceptionEvent};
use crate::perception::{
    assemble_perception_prompt, complete_and_parse, format_ltm_hit, Embedder, GenerationParams, PerceptionBackend,
    PerceptionError, PerceptionInput, Stage, LTM_SECTION_HEADER, NO_LTM_INSIGHTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarityWeights {
    pub vagueness: f64,
    pub discrepancy: f64,
    pub confidence: f64,
    pub threshold_min: f64,
    pub threshold_max: f64,
    pub ramp_per_cycle: f64,
}

impl Default for ClarityWeights {
    fn default() -> Self {
        Self {
            vagueness: 0.3,
            discrepancy: 0.5,
            confidence: 0.2,
            threshold_min: 0.35,
            threshold_max: 0.75,
            ramp_per_cycle: 0.01,
        }
    }
}

impl ClarityWeights {
    pub fn clarity_score(&self, vagueness: f64, discrepancy: f64, confidence: f64) -> f64 {
        self.vagueness * (1.0 - vagueness) + self.discrepancy * (1.0 - discrepancy) + self.confidence * confidence
    }

    /// Linear ramp from `threshold_min`, capped at `threshold_max`.
    pub fn clarity_threshold(&self, cycle: u64) -> f64 {
        (self.threshold_min + self.ramp_per_cycle * cycle as f64).min(self.threshold_max)
    }

    /// Gate decision for `event` at `cycle`. `force` (set for unresolved
    /// modes) always requests refinement.
    pub fn needs_refinement(&self, event: &PerceptionEvent, cycle: u64, force: bool) -> GateOutcome {
        let s = &event.scores;
        let clarity = self.clarity_score(s.vagueness, s.discrepancy, s.confidence);
        let threshold = self.clarity_threshold(cycle);
        GateOutcome { clarity, threshold, refine: force || clarity < threshold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutcome {
    pub clarity: f64,
    pub threshold: f64,
    pub refine: bool,
}

/// A retrieved long-term memory event as shown to the refinement prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct LtmInsight {
    pub mode: LocomotionMode,
    pub summary: String,
}

/// The perception prompt extended with ranked long-term memory insights and
/// a re-evaluation instruction.
pub fn assemble_refinement_prompt(
    input: &PerceptionInput,
    stm_context: &[String],
    ltm_hits: &[LtmInsight],
) -> Result<String, PerceptionError> {
    let mut p = assemble_perception_prompt(input, stm_context)?;
    p.push('\n');
    p.push_str(LTM_SECTION_HEADER);
    p.push('\n');
    if ltm_hits.is_empty() {
        p.push_str(NO_LTM_INSIGHTS);
        p.push('\n');
    } else {
        for (rank, hit) in ltm_hits.iter().enumerate() {
            let _ = writeln!(p, "- {}", format_ltm_hit(rank + 1, hit.mode, &hit.summary));
        }
    }
    p.push_str(
        "\n## Re-evaluation\n\
         Your first reading of this command was ambiguous. Re-examine the command and the frames against the \
         recent context and the similar past events above, giving priority to the safest plausible transition. \
         Answer again with a single JSON object using the same keys as before.\n",
    );
    Ok(p)
}

/// Second backend pass over an ambiguous event. The result keeps the
/// original's embeddings and scene fields, replaces mode, scores and
/// reasoning, and links back via `refined_from`.
pub fn refine(
    backend: &mut dyn PerceptionBackend,
    embedder: &dyn Embedder,
    input: &PerceptionInput,
    original: &PerceptionEvent,
    stm_context: &[String],
    ltm_hits: &[LtmInsight],
    params: GenerationParams,
) -> Result<PerceptionEvent, PerceptionError> {
    let prompt = assemble_refinement_prompt(input, stm_context, ltm_hits)?;
    let parsed = complete_and_parse(backend, embedder, input, Stage::Refinement, &prompt, params, refined_id(original))?;
    Ok(PerceptionEvent {
        mode: parsed.mode,
        scores: parsed.scores,
        reasoning_trace: parsed.reasoning_trace,
        event_id: parsed.event_id,
        refined_from: Some(original.event_id.clone()),
        ..original.clone()
    })
}

pub fn refined_id(original: &PerceptionEvent) -> String {
    format!("{}/refined", original.event_id)
}
