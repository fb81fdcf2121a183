use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{execute_move, observe, SceneSpec, SensorConfig, SimError, SyntheticEmbedder};
use crate::cognitive_controller::{prompts, EnvError, Environment, MoveResult, Sensed, TaskKind};
use crate::geometry::{Point2, Pose};
use crate::model_gateway::{self, ChatModel};
use crate::physical_space::{inflation_mask, DistanceField};
use crate::semantic_memory::GroundTruthTrajectory;

pub const EPISODE_SCRIPT_VERSION: u32 = 1;

// Clearance the reference path keeps from walls, meters.
const GT_CLEARANCE: f64 = 0.2;
const GT_RESOLUTION: f64 = 0.1;
/// The reference path must end this close to the target.
const GT_END_RADIUS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Category,
    Description,
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeScript {
    pub version: u32,
    pub id: String,
    pub scene: String,
    pub question: String,
    pub task: TaskKind,
    pub target_category: String,
    /// The specific instance the question is about.
    pub target_position: Point2,
    pub gt_answer: String,
    pub gt_trajectory: GroundTruthTrajectory,
    pub modality: Modality,
    pub spawn: Pose,
}

impl EpisodeScript {
    /// Builds a script whose reference path is the shortest clear path on the
    /// true map from the spawn to the reachable point nearest the target.
    #[allow(clippy::too_many_arguments)]
    pub fn plan(
        scene: &SceneSpec,
        id: &str,
        question: &str,
        task: TaskKind,
        target_object: usize,
        gt_answer: &str,
        spawn: Pose,
        modality: Modality,
    ) -> Result<Self, SimError> {
        let target = scene
            .objects
            .get(target_object)
            .ok_or_else(|| SimError::script(id, format!("no object {target_object}")))?;
        let grid = scene.raster(GT_RESOLUTION);
        let inflated = inflation_mask(&grid, GT_CLEARANCE / GT_RESOLUTION);
        let start = grid.world_to_cell(spawn.xy());
        let field = DistanceField::compute(&grid, start, |c| {
            grid.is_free(c) && !inflated[grid.index(c).expect("inside")]
        })
        .ok_or_else(|| SimError::script(id, "spawn outside the scene"))?;
        let goal = (0..grid.cells().len())
            .map(|i| grid.cell_at(i))
            .filter_map(|c| field.distance(&grid, c).map(|d| (c, grid.cell_center(c).distance(target.xy()), d)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)))
            .ok_or_else(|| SimError::script(id, "nothing reachable"))?;
        if goal.1 > GT_END_RADIUS {
            return Err(SimError::script(id, "target unreachable"));
        }
        let path = field.path_to(&grid, goal.0).expect("reachable");
        let mut waypoints = vec![spawn.xy()];
        waypoints.extend(path.waypoints.into_iter().skip(1));
        if waypoints.len() < 2 {
            waypoints.push(grid.cell_center(goal.0));
        }
        waypoints.dedup();
        let gt_trajectory =
            GroundTruthTrajectory::new(waypoints).map_err(|e| SimError::script(id, e.to_string()))?;
        let script = Self {
            version: EPISODE_SCRIPT_VERSION,
            id: id.to_string(),
            scene: scene.name.clone(),
            question: question.to_string(),
            task,
            target_category: target.category.clone(),
            target_position: target.xy(),
            gt_answer: gt_answer.to_string(),
            gt_trajectory,
            modality,
            spawn,
        };
        script.validate(scene)?;
        Ok(script)
    }

    pub fn validate(&self, scene: &SceneSpec) -> Result<(), SimError> {
        let err = |r: &str| SimError::script(&self.id, r);
        if self.version != EPISODE_SCRIPT_VERSION {
            return Err(err("unsupported version"));
        }
        if self.id.is_empty() || self.id.contains('/') {
            return Err(err("id must be non-empty without '/'"));
        }
        if self.scene != scene.name {
            return Err(err("scene mismatch"));
        }
        if !scene.spawns.iter().any(|s| s.xy().distance(self.spawn.xy()) < 1e-9) {
            return Err(err("spawn is not one of the scene's spawn poses"));
        }
        if !scene
            .instances(&self.target_category)
            .any(|i| scene.objects[i].xy().distance(self.target_position) < 1e-9)
        {
            return Err(err("target position is not an instance of the target category"));
        }
        let w = &self.gt_trajectory.waypoints;
        GroundTruthTrajectory::new(w.clone()).map_err(|e| err(&e.to_string()))?;
        if w[0].distance(self.spawn.xy()) > 1e-9 {
            return Err(err("trajectory does not start at the spawn"));
        }
        if w[w.len() - 1].distance(self.target_position) > GT_END_RADIUS {
            return Err(err("trajectory does not end within 1 m of the target"));
        }
        if w.iter().any(|p| !scene.contains(*p)) || w.windows(2).any(|s| !scene.line_of_sight(s[0], s[1])) {
            return Err(err("trajectory crosses a wall"));
        }
        Ok(())
    }

    pub fn shortest_length(&self) -> f64 {
        self.gt_trajectory.length()
    }
}

/// Lowercase words with punctuation and articles removed.
pub fn normalize_answer(s: &str) -> String {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub matched: bool,
    /// The judge failed; `matched` is then false.
    pub error: bool,
}

/// Normalized string matching without a judge, otherwise the judge decides.
pub fn judge_answer(script: &EpisodeScript, answer: &str, judge: Option<&dyn ChatModel>) -> Judgement {
    if normalize_answer(answer).is_empty() {
        return Judgement {
            matched: false,
            error: false,
        };
    }
    match judge {
        None => Judgement {
            matched: normalize_answer(answer) == normalize_answer(&script.gt_answer),
            error: false,
        },
        Some(j) => match model_gateway::ask_yes_no(j, &prompts::judge_request(&script.question, &script.gt_answer, answer)) {
            Ok((m, _)) => Judgement {
                matched: m,
                error: false,
            },
            Err(e) => {
                log::warn!("judge failed for {}: {e}", script.id);
                Judgement {
                    matched: false,
                    error: true,
                }
            }
        },
    }
}

/// One episode in one scene.
pub struct SimEnvironment {
    scene: Arc<SceneSpec>,
    script: EpisodeScript,
    embedder: Arc<SyntheticEmbedder>,
    sensor: SensorConfig,
    pose: Pose,
    success_radius: f64,
    judge: Option<Arc<dyn ChatModel>>,
}

impl SimEnvironment {
    pub fn new(
        scene: Arc<SceneSpec>,
        script: EpisodeScript,
        embedder: Arc<SyntheticEmbedder>,
        sensor: SensorConfig,
        success_radius: f64,
        judge: Option<Arc<dyn ChatModel>>,
    ) -> Result<Self, SimError> {
        script.validate(&scene)?;
        Ok(Self {
            pose: script.spawn,
            scene,
            script,
            embedder,
            sensor,
            success_radius,
            judge,
        })
    }

    pub fn script(&self) -> &EpisodeScript {
        &self.script
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    /// Whether the agent stands within the success radius of any instance of
    /// the target category.
    pub fn near_target(&self) -> bool {
        self.scene
            .instances(&self.script.target_category)
            .any(|i| self.scene.objects[i].xy().distance(self.pose.xy()) <= self.success_radius)
    }
}

impl Environment for SimEnvironment {
    fn pose(&self) -> Pose {
        self.pose
    }

    fn task(&self) -> TaskKind {
        self.script.task
    }

    fn sense(&mut self, episode_id: &str, timestep: u64) -> Result<Sensed, EnvError> {
        observe(&self.scene, &self.pose, &self.sensor, &self.embedder, episode_id, timestep).map_err(|e| match e {
            SimError::OutsideScene { .. } => EnvError::OutOfScene(e.to_string()),
            other => EnvError::Fault(other.to_string()),
        })
    }

    fn move_along(&mut self, path: &[Point2]) -> Result<MoveResult, EnvError> {
        let r = execute_move(&self.scene, &self.pose, path);
        self.pose = r.pose;
        Ok(r)
    }

    fn shortest_path_length(&self) -> f64 {
        self.script.shortest_length()
    }

    fn evaluate(&mut self, answer: Option<&str>) -> (bool, bool) {
        match self.script.task {
            TaskKind::Navigation => (self.near_target(), false),
            TaskKind::Qa => {
                let j = judge_answer(&self.script, answer.unwrap_or(""), self.judge.as_deref());
                (j.matched, j.error)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::ScriptedChat;
    use crate::simulator::reference_episode;

    #[test]
    fn normalized_matching() {
        let s = reference_episode();
        assert!(judge_answer(&s, &s.gt_answer.to_uppercase(), None).matched);
        assert!(judge_answer(&s, &format!("The {}.", s.gt_answer), None).matched);
        assert!(!judge_answer(&s, "", None).matched);
        assert!(!judge_answer(&s, "  ..", None).matched);
        assert!(!judge_answer(&s, "purple", None).matched);
    }

    #[test]
    fn judge_failure_sets_flag() {
        let s = reference_episode();
        let j = judge_answer(&s, "green", Some(&ScriptedChat::failing("down")));
        assert_eq!(
            j,
            Judgement {
                matched: false,
                error: true
            }
        );
        let j = judge_answer(&s, "verdant", Some(&ScriptedChat::constant("yes")));
        assert!(j.matched);
    }

    #[test]
    fn reference_trajectory_is_valid() {
        let s = reference_episode();
        let scene = crate::simulator::reference_scene();
        s.validate(scene).unwrap();
        assert!(s.shortest_length() > 8.0);
        let mut bad = s.clone();
        bad.gt_trajectory.waypoints[1] = Point2::new(4.0, 0.5);
        bad.gt_trajectory.waypoints.insert(1, Point2::new(3.0, 0.5));
        assert!(bad.validate(scene).is_err());
    }
}
