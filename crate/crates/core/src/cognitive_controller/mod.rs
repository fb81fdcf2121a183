//! The four-state cognitive loop sequencing exploration, verification,
//! approach and answering.

mod agent;
pub mod prompts;
mod state;

pub use agent::{run_episode, Agent, AgentContext, EpisodeRun};
pub use state::{is_legal_edge, transition, CognitiveState, Signals};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose};
use crate::physical_space::ScanRay;
use crate::semantic_memory::ReasoningLog;
use crate::semantic_space::Observation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub d_min: f64,
    pub k_retrieve: usize,
    pub k_match: usize,
    pub rule_top_k: usize,
    pub step_budget: usize,
    pub success_radius: f64,
    pub min_unknown_area: usize,
    pub recall_enabled: bool,
    pub rules_enabled: bool,
    pub rng_seed: u64,
    /// Target-tier similarity that raises a candidate.
    pub candidate_trigger: f64,
    /// Distance at which an approach counts as arrived.
    pub approach_radius: f64,
    /// Clearance kept from known obstacles when planning, meters.
    pub inflation_radius: f64,
    pub resolution: f64,
    pub max_retries: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            d_min: 1.5,
            k_retrieve: 8,
            k_match: 8,
            rule_top_k: 3,
            step_budget: 50,
            success_radius: 1.0,
            min_unknown_area: crate::physical_space::DEFAULT_MIN_UNKNOWN_AREA,
            recall_enabled: true,
            rules_enabled: true,
            rng_seed: 0,
            candidate_trigger: 0.75,
            approach_radius: 0.5,
            inflation_radius: 0.2,
            resolution: crate::physical_space::DEFAULT_RESOLUTION,
            max_retries: crate::model_gateway::DEFAULT_MAX_RETRIES,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let counts = [self.k_retrieve, self.k_match, self.rule_top_k, self.step_budget];
        if counts.contains(&0) {
            return Err(AgentError::Config("counts and budget must be at least 1".into()));
        }
        let positive = [self.success_radius, self.resolution, self.approach_radius];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(AgentError::Config("radii and resolution must be positive".into()));
        }
        if !(self.d_min.is_finite() && self.d_min >= 0.0 && self.inflation_radius >= 0.0) {
            return Err(AgentError::Config("d_min and inflation radius must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.candidate_trigger) {
            return Err(AgentError::Config("candidate trigger must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveTo { waypoint: Point2, path: Vec<Point2> },
    Verify { observation_id: String },
    Answer { text: String },
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub action: Action,
    pub previous_state: CognitiveState,
    pub new_state: CognitiveState,
    pub log_entry: crate::semantic_memory::LogEntry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Navigation,
    Qa,
}

/// What the environment senses at the agent's pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensed {
    pub observation: Observation,
    pub scan: Vec<ScanRay>,
    pub max_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveResult {
    pub pose: Pose,
    pub distance: f64,
    pub collided: bool,
    /// Where motion was blocked, when it was.
    pub blocked_at: Option<Point2>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("pose outside the scene: {0}")]
    OutOfScene(String),
    #[error("environment fault: {0}")]
    Fault(String),
}

/// The world an agent acts in.
pub trait Environment {
    fn pose(&self) -> Pose;
    fn task(&self) -> TaskKind;
    fn sense(&mut self, episode_id: &str, timestep: u64) -> Result<Sensed, EnvError>;
    fn move_along(&mut self, path: &[Point2]) -> Result<MoveResult, EnvError>;
    /// Length of the reference shortest path for this episode.
    fn shortest_path_length(&self) -> f64;
    /// Whether the episode succeeded given the final answer; the second value
    /// flags a judging error.
    fn evaluate(&mut self, answer: Option<&str>) -> (bool, bool);
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("episode already finished")]
    Finished,
    #[error("{0}")]
    Internal(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub answer: Option<String>,
    pub success: bool,
    pub steps: usize,
    pub path_len: f64,
    pub shortest_len: f64,
    pub spl: f64,
    pub stopped: bool,
    pub judge_error: bool,
    pub aborted: Option<String>,
    pub recall_source: Option<String>,
    pub explore: bool,
    pub log: ReasoningLog,
    /// The action taken at each logged step.
    pub actions: Vec<Action>,
}

impl EpisodeResult {
    /// Every consecutive state change in the log, starting from Exploration.
    pub fn transitions(&self) -> Vec<(CognitiveState, CognitiveState)> {
        let mut prev = CognitiveState::Exploration;
        self.log
            .entries
            .iter()
            .map(|e| {
                let t = (prev, e.state);
                prev = e.state;
                t
            })
            .collect()
    }
}
