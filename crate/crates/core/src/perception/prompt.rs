use std::fmt::Write as _;

use super::{PerceptionError, PerceptionInput};
use crate::model::LocomotionMode;

pub const STM_SECTION_HEADER: &str = "## Recent context (short-term memory)";
pub const NO_RECENT_CONTEXT: &str = "No recent context is available.";
pub const LTM_SECTION_HEADER: &str = "## Similar past events (long-term memory)";
pub const NO_LTM_INSIGHTS: &str = "No similar past events were retrieved.";

/// Keys of the JSON object every backend response must contain.
pub const OUTPUT_KEYS: [&str; 10] = [
    "reasoning",
    "locomotion_mode",
    "vagueness",
    "discrepancy",
    "importance",
    "confidence",
    "environment",
    "primary_object",
    "obstacles",
    "summary",
];

/// Builds the perception prompt. Sections appear in a fixed order: task
/// framing, the verbatim command, frame instructions, STM context, the mode
/// vocabulary, reasoning steps, and the JSON output schema.
pub fn assemble_perception_prompt(input: &PerceptionInput, stm_context: &[String]) -> Result<String, PerceptionError> {
    if input.command.trim().is_empty() {
        return Err(PerceptionError::EmptyCommand);
    }
    let mut p = String::with_capacity(2048);
    p.push_str(
        "You are the perception module of a locomotion-intent prediction agent that drives a \
         lower-limb exoskeleton on a construction site. Predict the wearer's intended locomotion \
         mode from their spoken command and their field-of-view frames.\n\n",
    );

    p.push_str("## Spoken command\n");
    let _ = writeln!(p, "\"{}\"\n", input.command);

    p.push_str("## Field-of-view frames\n");
    p.push_str(
        "The attached grid holds nine sequential frames covering 1.5 seconds: 0.25 s before and \
         1.25 s after the command was spoken. Read them in chronological order, left to right and \
         top to bottom.\n\n",
    );

    p.push_str(STM_SECTION_HEADER);
    p.push('\n');
    if stm_context.is_empty() {
        p.push_str(NO_RECENT_CONTEXT);
        p.push('\n');
    } else {
        for line in stm_context {
            let _ = writeln!(p, "- {line}");
        }
    }
    p.push('\n');

    p.push_str("## Locomotion modes\nAnswer with exactly one of:\n");
    for mode in LocomotionMode::ALL {
        let _ = writeln!(p, "- {}: {}", mode.code(), mode.name());
    }
    p.push('\n');

    p.push_str(
        "## Reasoning steps\n\
         Think step by step before answering:\n\
         1. Inspect the frames: describe the environment, the primary object, any obstacles, and the direction of motion.\n\
         2. Interpret the command and judge how vague it is.\n\
         3. Validate safety: check the command against the frames and against the most recent mode in the context above. \
         If they conflict, trust the visual evidence and choose the safer transition.\n\
         4. Rate the discrepancy between command and frames, the importance of the event (its safety risk or relevance), \
         and your confidence in the prediction.\n\n",
    );

    p.push_str(
        "## Output\n\
         Respond with a single JSON object and nothing else, using these keys:\n\
         {\n\
         \x20 \"reasoning\": string, your step-by-step reasoning,\n\
         \x20 \"locomotion_mode\": one code from the list above,\n\
         \x20 \"vagueness\": number in [0, 1],\n\
         \x20 \"discrepancy\": number in [0, 1],\n\
         \x20 \"importance\": number in [0, 1],\n\
         \x20 \"confidence\": number in [0, 1],\n\
         \x20 \"environment\": string, e.g. \"indoor\" or \"outdoor\",\n\
         \x20 \"primary_object\": string,\n\
         \x20 \"obstacles\": array of strings,\n\
         \x20 \"summary\": string, one sentence covering the command and key visual details\n\
         }\n",
    );
    Ok(p)
}

/// One ranked line of the long-term memory block in a refinement prompt.
pub fn format_ltm_hit(rank: usize, mode: LocomotionMode, summary: &str) -> String {
    format!("[{rank}] {} ({}): {summary}", mode.name(), mode.code())
}
