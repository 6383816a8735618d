//! Memory-augmented locomotion-intent prediction.
//!
//! Each event goes through perception (with short-term context), a clarity
//! gate, and an optional refinement pass informed by long-term memory. The
//! [`eval`] module scores decision logs and runs the memory ablations, and
//! [`synth`] builds seeded corpora whose oracle backend reacts to the actual
//! prompt contents.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod gate;
pub mod hashing;
pub mod ltm;
pub mod model;
pub mod perception;
pub mod pipeline;
pub mod stm;
pub mod synth;

pub use config::{load_config, EngineConfig};
pub use dataset::{load_dataset, EpisodeRecord};
pub use eval::{run_ablation, AblationReport, EvalReport};
pub use model::{CommandType, LocomotionMode, PerceptionEvent, ScoreSet};
pub use pipeline::{AblationCondition, Agent, Decision, DecisionLog};
pub use synth::{synth_generate, SynthOracleParams, SyntheticOracle};
