//! Deterministic grid-world environment: scenes of wall segments and labelled
//! objects, a ray-cast sensor, synthetic embeddings, a rule-based adjudicator
//! and episode scripts with ground truth.

mod adjudicator;
mod embed;
mod env;
mod generate;
mod scene;
mod sensor;
mod vocab;

pub use adjudicator::{SimAdjudicator, AREA_RULE_PHRASE, READY_RANGE, VERIFY_RADIUS};
pub use embed::{SyntheticEmbedder, DEFAULT_SIGMA};
pub use env::{
    judge_answer, normalize_answer, EpisodeScript, Judgement, Modality, SimEnvironment, EPISODE_SCRIPT_VERSION,
};
pub use generate::{
    constructed_coverage_scene, generate_scene, paired_revisit_suite, reference_episode, reference_scene,
    rule_sensitive_scene, rule_sensitive_suite, RevisitPair, ScenarioKind, SceneGenConfig,
};
pub use scene::{AreaSpec, Bounds, SceneObject, SceneSpec, SCENE_VERSION};
pub use sensor::{
    cast_scan, execute_move, format_image_ref, observe, parse_image_ref, visible_objects, SensorConfig,
};
pub use vocab::{TermKind, Vocabulary};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid scene {scene}: {reason}")]
    Scene { scene: String, reason: String },
    #[error("invalid episode script {id}: {reason}")]
    Script { id: String, reason: String },
    #[error("pose ({x:.3}, {y:.3}) outside scene {scene}")]
    OutsideScene { scene: String, x: f64, y: f64 },
    #[error("embedder: {0}")]
    Embedding(String),
    #[error("{0}")]
    Io(String),
}

impl SimError {
    pub(crate) fn scene(scene: &str, reason: impl Into<String>) -> Self {
        SimError::Scene {
            scene: scene.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn script(id: &str, reason: impl Into<String>) -> Self {
        SimError::Script {
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}
