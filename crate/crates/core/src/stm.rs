//! Short-term memory: a time-windowed buffer of recent perception events.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{LocomotionMode, PerceptionEvent};

pub const DEFAULT_RETENTION_S: f64 = 45.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StmError {
    #[error("event at t={timestamp} is older than the newest STM entry at t={latest}")]
    OutOfOrder { timestamp: f64, latest: f64 },
    #[error("invalid timestamp {0}")]
    InvalidTimestamp(f64),
}

#[derive(Debug, Clone)]
pub struct StmBuffer {
    entries: VecDeque<PerceptionEvent>,
    retention_window: f64,
}

impl Default for StmBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION_S)
    }
}

impl StmBuffer {
    pub fn new(retention_window: f64) -> Self {
        Self { entries: VecDeque::new(), retention_window }
    }

    pub fn retention_window(&self) -> f64 {
        self.retention_window
    }

    /// Appends `event` and prunes relative to its timestamp. Equal timestamps
    /// are allowed.
    pub fn insert(&mut self, event: PerceptionEvent) -> Result<(), StmError> {
        if !event.timestamp.is_finite() || event.timestamp < 0.0 {
            return Err(StmError::InvalidTimestamp(event.timestamp));
        }
        if let Some(last) = self.entries.back() {
            if event.timestamp < last.timestamp {
                return Err(StmError::OutOfOrder { timestamp: event.timestamp, latest: last.timestamp });
            }
        }
        let now = event.timestamp;
        self.entries.push_back(event);
        self.prune(now);
        Ok(())
    }

    /// Drops entries older than the retention window. An entry aged exactly
    /// the window is kept.
    pub fn prune(&mut self, now: f64) {
        self.entries.retain(|e| now - e.timestamp <= self.retention_window);
    }

    /// Context lines, oldest first.
    pub fn context(&self) -> Vec<String> {
        self.entries.iter().map(context_line).collect()
    }

    pub fn latest_mode(&self) -> Option<LocomotionMode> {
        self.entries.back().map(|e| e.mode)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PerceptionEvent> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

pub fn context_line(event: &PerceptionEvent) -> String {
    format!(
        "At {}: {} in a {} environment, interacting with a {}",
        format_timestamp(event.timestamp),
        event.mode.name(),
        event.environment,
        event.primary_object
    )
}

/// One decimal place; integral timestamps print without the fraction.
pub fn format_timestamp(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.0}")
    } else {
        format!("{t:.1}")
    }
}
