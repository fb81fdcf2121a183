//! Rules distilled from past runs: trajectory deviations, workflow
//! extraction, rule extraction, storage, and retrieval by question.

mod deviation;
mod rules;
mod workflow;

pub use deviation::{
    crossing_count, crossing_indices, detect_deviations, detect_log_deviations, deviation_series, DeviationResult,
    ThresholdSchedule,
};
pub use rules::{
    extract_rules, format_rules_for_prompt, retrieve_rules, retrieve_rules_with, Rule, RuleExtraction, RuleForm,
    RuleStore, RULE_STORE_VERSION,
};
pub use workflow::{extract_pseudocode, validate_body, PseudocodeWorkflow, Symbol, PSEUDOCODE_KEYWORDS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cognitive_controller::CognitiveState;
use crate::geometry::Point2;
use crate::model_gateway::GatewayError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("extraction failed: {reason}")]
    Extraction { reason: String, raw: Option<String> },
    #[error("workflow validation failed: {0}")]
    Validation(String),
    #[error("rule store: {0}")]
    Store(String),
}

impl From<GatewayError> for MemoryError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(m) => MemoryError::Config(m),
            other => MemoryError::Extraction {
                raw: other.raw_reply().map(str::to_string),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTrajectory {
    pub waypoints: Vec<Point2>,
}

impl GroundTruthTrajectory {
    pub fn new(waypoints: Vec<Point2>) -> Result<Self, MemoryError> {
        if waypoints.len() < 2 {
            return Err(MemoryError::Invalid("trajectory needs at least two waypoints".into()));
        }
        if waypoints.windows(2).any(|w| w[0] == w[1]) {
            return Err(MemoryError::Invalid("consecutive waypoints coincide".into()));
        }
        if waypoints.iter().any(|p| !p.is_finite()) {
            return Err(MemoryError::Invalid("non-finite waypoint".into()));
        }
        Ok(Self { waypoints })
    }

    pub fn length(&self) -> f64 {
        crate::geometry::polyline_length(&self.waypoints)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub timestep: u64,
    pub position: Point2,
    pub state: CognitiveState,
    pub image_ref: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestep: u64,
    pub state: CognitiveState,
    pub decision: String,
    pub point: TrajectoryPoint,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningLog {
    pub entries: Vec<LogEntry>,
}

impl ReasoningLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry; timesteps must increase strictly.
    pub fn push(&mut self, entry: LogEntry) -> Result<(), MemoryError> {
        if let Some(last) = self.entries.last() {
            if entry.timestep <= last.timestep {
                return Err(MemoryError::Invalid(format!(
                    "timestep {} does not follow {}",
                    entry.timestep, last.timestep
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// One line per entry, for prompts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "t={} [{}] at ({:.2}, {:.2}): {}\n",
                e.timestep, e.state, e.point.position.x, e.point.position.y, e.decision
            ));
        }
        s
    }
}

/// A timestep where the agent drifted away from the reference path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationEvent {
    pub timestep: u64,
    pub h_value: f64,
    pub threshold_used: f64,
    pub image_ref: String,
}
