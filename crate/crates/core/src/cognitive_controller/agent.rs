use super::prompts::{self, FrontierView};
use super::{
    transition, Action, AgentConfig, AgentError, CognitiveState, Environment, EpisodeResult, MoveResult, Sensed,
    Signals, StepOutcome,
};
use crate::episodic_memory::{self, EpisodeRecord, EpisodicRecall, EpisodicStore};
use crate::geometry::{Point2, Pose};
use crate::model_gateway::{self, ChatModel, Embedder, Reply};
use crate::physical_space::{
    compute_spl, extract_frontiers, inflation_mask, prune_frontiers, render_retrieved_poses, Cell, CellState,
    DistanceField, Frontier, OccupancyGrid,
};
use crate::semantic_memory::{self, LogEntry, ReasoningLog, RuleStore, TrajectoryPoint};
use crate::semantic_space::{self, GoalSpec, GoalTerm, SemanticStore};

/// Shared services an agent calls into.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub chat: &'a dyn ChatModel,
    pub embedder: &'a dyn Embedder,
    pub episodic: Option<&'a EpisodicStore>,
    pub rules: Option<&'a RuleStore>,
}

#[derive(Clone, Debug, PartialEq)]
struct Candidate {
    position: Point2,
    observation_id: String,
}

// Frontier goals closer than this to an earlier goal are not revisited.
const VISITED_RADIUS: f64 = 0.3;
// Rejected candidates suppress new ones this close.
const REJECT_RADIUS: f64 = 0.5;

pub struct Agent<'a> {
    ctx: AgentContext<'a>,
    config: AgentConfig,
    episode_id: String,
    goal: GoalSpec,
    state: CognitiveState,
    semantic: SemanticStore,
    grid: Option<OccupancyGrid>,
    pose: Option<Pose>,
    timestep: u64,
    log: ReasoningLog,
    actions: Vec<Action>,
    candidate: Option<Candidate>,
    rejected: Vec<Point2>,
    pending_verdict: Option<bool>,
    pending_ready: Option<bool>,
    approach_stalled: bool,
    recall: Option<EpisodicRecall>,
    recall_done: bool,
    explore: bool,
    visited_goals: Vec<Point2>,
    rules_block: String,
    last_observation: Option<(String, String)>,
    finished: bool,
}

impl<'a> Agent<'a> {
    /// Decomposes the instruction and loads retrieved rules. A failed
    /// decomposition falls back to searching for the whole instruction.
    pub fn new(
        ctx: AgentContext<'a>,
        config: AgentConfig,
        instruction: &str,
        episode_id: &str,
        dim: usize,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let goal = match semantic_space::decompose_goal(instruction, ctx.chat, ctx.embedder, dim, config.max_retries) {
            Ok(g) => g,
            Err(model_gateway::GatewayError::Config(m)) => return Err(AgentError::Config(m)),
            Err(e) => {
                log::warn!("goal decomposition failed, using the instruction as target: {e}");
                GoalSpec {
                    raw_instruction: instruction.to_string(),
                    target_object: GoalTerm {
                        text: instruction.to_string(),
                        embedding: model_gateway::embed(ctx.embedder, instruction, dim)
                            .map_err(|e| AgentError::Config(e.to_string()))?,
                    },
                    relative_objects: Vec::new(),
                    relative_areas: Vec::new(),
                }
            }
        };
        let rules_block = match (config.rules_enabled, ctx.rules) {
            (true, Some(store)) => match semantic_memory::retrieve_rules(store, instruction, ctx.embedder, config.rule_top_k) {
                Ok(hits) => {
                    let rules: Vec<_> = hits.into_iter().map(|(r, _)| r).collect();
                    semantic_memory::format_rules_for_prompt(&rules)
                }
                Err(e) => {
                    log::warn!("rule retrieval failed: {e}");
                    String::new()
                }
            },
            _ => String::new(),
        };
        Ok(Self {
            ctx,
            config,
            episode_id: episode_id.to_string(),
            goal,
            state: CognitiveState::Exploration,
            semantic: SemanticStore::new(dim),
            grid: None,
            pose: None,
            timestep: 0,
            log: ReasoningLog::new(),
            actions: Vec::new(),
            candidate: None,
            rejected: Vec::new(),
            pending_verdict: None,
            pending_ready: None,
            approach_stalled: false,
            recall: None,
            recall_done: false,
            explore: true,
            visited_goals: Vec::new(),
            rules_block,
            last_observation: None,
            finished: false,
        })
    }

    pub fn goal(&self) -> &GoalSpec {
        &self.goal
    }

    pub fn state(&self) -> CognitiveState {
        self.state
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn episode_id(&self) -> &str {
        &self.episode_id
    }

    pub fn grid(&self) -> Option<&OccupancyGrid> {
        self.grid.as_ref()
    }

    pub fn semantic(&self) -> &SemanticStore {
        &self.semantic
    }

    pub fn log(&self) -> &ReasoningLog {
        &self.log
    }

    pub fn recall(&self) -> Option<&EpisodicRecall> {
        self.recall.as_ref()
    }

    pub fn rules_block(&self) -> &str {
        &self.rules_block
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn steps_taken(&self) -> usize {
        self.log.len()
    }

    /// One decision: integrate the observation, update the state, act.
    pub fn step(&mut self, sensed: &Sensed) -> Result<StepOutcome, AgentError> {
        if self.finished || self.log.len() >= self.config.step_budget {
            return Err(AgentError::Finished);
        }
        self.integrate(sensed)?;
        let budget_exhausted = self.log.len() + 1 >= self.config.step_budget;
        let mut signals = Signals {
            budget_exhausted,
            ..Default::default()
        };
        match self.state {
            CognitiveState::Exploration => {
                if let Some(c) = self.find_candidate() {
                    signals.target_candidate_found = true;
                    self.candidate = Some(c);
                }
            }
            CognitiveState::TargetVerification => {
                signals.target_confirmed = Some(self.pending_verdict.take().unwrap_or(false));
            }
            CognitiveState::TargetApproaching => signals.at_target = self.at_target(),
            CognitiveState::CheckReadyToAnswer => signals.ready_to_answer = self.pending_ready.take(),
        }
        let previous = self.state;
        let new_state = transition(previous, signals);
        if new_state == CognitiveState::Exploration && previous != CognitiveState::Exploration {
            if let Some(c) = self.candidate.take() {
                self.rejected.push(c.position);
            }
        }
        self.state = new_state;
        let (action, decision) = match new_state {
            CognitiveState::Exploration => self.act_explore(),
            CognitiveState::TargetVerification => self.act_verify(),
            CognitiveState::TargetApproaching => self.act_approach(),
            CognitiveState::CheckReadyToAnswer => self.act_ready(budget_exhausted),
        };
        if matches!(action, Action::Answer { .. } | Action::Stop) {
            self.finished = true;
        }
        let pose = self.pose.expect("integrated");
        let (_, image_ref) = self.last_observation.clone().expect("integrated");
        let entry = LogEntry {
            timestep: self.timestep,
            state: new_state,
            decision,
            point: TrajectoryPoint {
                timestep: self.timestep,
                position: pose.xy(),
                state: new_state,
                image_ref,
            },
        };
        self.log
            .push(entry.clone())
            .map_err(|e| AgentError::Internal(e.to_string()))?;
        self.actions.push(action.clone());
        self.timestep += 1;
        Ok(StepOutcome {
            action,
            previous_state: previous,
            new_state,
            log_entry: entry,
        })
    }

    /// Updates the pose after a move; a blocked move marks the blocking cell.
    pub fn apply_move(&mut self, result: &MoveResult) {
        self.pose = Some(result.pose);
        let (Some(grid), Some(p)) = (self.grid.as_mut(), result.blocked_at) else {
            return;
        };
        let c = grid.world_to_cell(p);
        if c != grid.world_to_cell(result.pose.xy()) {
            grid.set(c, CellState::Occupied);
        }
    }

    fn integrate(&mut self, sensed: &Sensed) -> Result<(), AgentError> {
        let obs = &sensed.observation;
        let p = obs.pose.xy();
        let grid = match self.grid.take() {
            None => OccupancyGrid::centered_on(p, sensed.max_range + 1.0, self.config.resolution)
                .map_err(|e| AgentError::Internal(e.to_string()))?,
            Some(g) if !g.contains_point(p) => g.grown_to_include(p, p, 1.0),
            Some(g) => g,
        };
        let grid = grid
            .integrate_depth_scan(&obs.pose, &sensed.scan, sensed.max_range)
            .map_err(|e| AgentError::Internal(e.to_string()))?;
        self.grid = Some(grid);
        self.semantic
            .insert_observation(obs.clone())
            .map_err(|e| AgentError::Internal(e.to_string()))?;
        self.pose = Some(obs.pose);
        self.last_observation = Some((obs.id.clone(), obs.image_ref.clone()));
        Ok(())
    }

    fn find_candidate(&self) -> Option<Candidate> {
        let n = self.semantic.region_count();
        if n == 0 {
            return None;
        }
        let hits = self.semantic.query_regions(&self.goal.target_object.embedding, n).ok()?;
        for h in hits {
            if h.similarity < self.config.candidate_trigger {
                break;
            }
            let region = self.semantic.region(&h.observation_id, h.region_index)?;
            let pos = Point2::new(region.box3d.center[0], region.box3d.center[1]);
            if self.rejected.iter().any(|r| r.distance(pos) < REJECT_RADIUS) {
                continue;
            }
            return Some(Candidate {
                position: pos,
                observation_id: h.observation_id,
            });
        }
        None
    }

    fn at_target(&self) -> bool {
        match (&self.candidate, self.pose) {
            (Some(c), Some(p)) => self.approach_stalled || p.xy().distance(c.position) <= self.config.approach_radius,
            _ => true,
        }
    }

    fn current_image(&self) -> String {
        self.last_observation.as_ref().map(|o| o.1.clone()).unwrap_or_default()
    }

    fn current_cell(&self) -> Cell {
        let grid = self.grid.as_ref().expect("integrated");
        grid.world_to_cell(self.pose.expect("integrated").xy())
    }

    /// Shortest paths over known-free cells kept clear of obstacles; cells
    /// next to the agent stay usable so it can leave tight spots.
    fn distance_field(&self) -> Option<DistanceField> {
        let grid = self.grid.as_ref()?;
        let start = self.current_cell();
        let radius = self.config.inflation_radius / grid.resolution();
        let inflated = inflation_mask(grid, radius);
        let escape = radius.ceil() as i64;
        DistanceField::compute(grid, start, |c| {
            grid.is_free(c)
                && (!inflated[grid.index(c).expect("inside")]
                    || ((c.x - start.x).abs() <= escape && (c.y - start.y).abs() <= escape))
        })
    }

    fn run_recall(&mut self) {
        self.recall_done = true;
        let Some(store) = self.ctx.episodic.filter(|s| !s.is_empty()) else {
            return;
        };
        let Some((obs_id, image)) = self.last_observation.clone() else {
            return;
        };
        let Some(current) = self.semantic.get(&obs_id) else {
            return;
        };
        let similar = store.retrieve_similar(current, self.config.k_retrieve);
        if similar.is_empty() {
            return;
        }
        let verified = match episodic_memory::verify_locality(&similar, &image, self.ctx.chat) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("locality verification failed, exploring: {e}");
                return;
            }
        };
        self.recall = episodic_memory::select_episode(
            &verified,
            &self.goal,
            store,
            self.config.k_match,
            self.config.candidate_trigger,
        );
        let decision = episodic_memory::decide_explore(self.recall.as_ref(), &self.goal, self.ctx.chat);
        self.explore = decision.explore;
    }

    fn act_explore(&mut self) -> (Action, String) {
        if self.config.recall_enabled && !self.recall_done {
            self.run_recall();
        }
        let grid = self.grid.as_ref().expect("integrated");
        let pose = self.pose.expect("integrated");
        let Some(field) = self.distance_field() else {
            return (Action::Stop, "agent is off the map".into());
        };
        // (frontier, goal cell, path distance)
        let mut reachable: Vec<(Frontier, Cell, f64)> = extract_frontiers(grid, self.config.min_unknown_area)
            .into_iter()
            .filter_map(|f| {
                let (cell, d) = f
                    .cells
                    .iter()
                    .filter_map(|c| field.distance(grid, *c).map(|d| (*c, d)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))?;
                let goal = grid.cell_center(cell);
                let visited = self.visited_goals.iter().any(|v| v.distance(goal) < VISITED_RADIUS);
                (d > 0.0 && !visited).then_some((f, cell, d))
            })
            .collect();
        reachable.sort_by(|a, b| a.2.total_cmp(&b.2));
        let landmarks: Vec<Pose> = self.recall.as_ref().map(|r| r.retrieved_poses.clone()).unwrap_or_default();
        let map = render_retrieved_poses(
            grid.clone(),
            landmarks.clone(),
            pose,
            reachable.iter().map(|r| r.0.clone()).collect(),
        );
        let mut kept = prune_frontiers(&map, self.explore, self.config.d_min);
        let mut note = String::new();
        if kept.is_empty() && !self.explore {
            kept = prune_frontiers(&map, true, self.config.d_min);
            note = " (landmark filter emptied the set)".into();
        }
        if kept.is_empty() {
            return (Action::Stop, "no reachable frontier".into());
        }
        // `kept` preserves the distance order; recover each one's goal cell.
        let options: Vec<(Frontier, Cell, f64)> = kept
            .into_iter()
            .map(|f| {
                let r = reachable.iter().find(|r| r.0.cells == f.cells).expect("pruning only filters");
                (f, r.1, r.2)
            })
            .collect();
        let views: Vec<FrontierView> = options.iter().map(|(f, _, d)| FrontierView::new(f, *d)).collect();
        let landmark_points: Vec<Point2> = landmarks.iter().map(Pose::xy).collect();
        let req = prompts::frontier_request(
            &self.goal.raw_instruction,
            &self.goal.target_object.text,
            pose.xy(),
            &views,
            (!self.explore).then_some(landmark_points.as_slice()),
            &self.current_image(),
        );
        let choice = match model_gateway::complete(self.ctx.chat, &req) {
            Ok(c) => match c.reply {
                Reply::Index(i) => i,
                _ => 0,
            },
            Err(e) => {
                log::warn!("frontier choice failed, taking the nearest: {e}");
                0
            }
        };
        let (f, cell, _) = &options[choice];
        let path = field.path_to(grid, *cell).expect("reachable by construction");
        let waypoint = *path.waypoints.last().expect("non-empty path");
        self.visited_goals.push(waypoint);
        let decision = format!(
            "explore={} chose frontier {choice} of {} at ({:.2}, {:.2}){note}",
            self.explore,
            options.len(),
            f.centroid.x,
            f.centroid.y
        );
        (
            Action::MoveTo {
                waypoint,
                path: path.waypoints,
            },
            decision,
        )
    }

    fn act_verify(&mut self) -> (Action, String) {
        let c = self.candidate.clone().expect("verification needs a candidate");
        let image = self
            .semantic
            .get(&c.observation_id)
            .map(|o| o.image_ref.clone())
            .unwrap_or_else(|| self.current_image());
        let req = prompts::verify_request(
            &self.goal.raw_instruction,
            &self.goal.target_object.text,
            c.position,
            &image,
            &self.rules_block,
        );
        let verdict = match model_gateway::ask_yes_no(self.ctx.chat, &req) {
            Ok((v, _)) => v,
            Err(e) => {
                log::warn!("verification failed, rejecting candidate: {e}");
                false
            }
        };
        self.pending_verdict = Some(verdict);
        (
            Action::Verify {
                observation_id: c.observation_id.clone(),
            },
            format!(
                "candidate at ({:.2}, {:.2}) {}",
                c.position.x,
                c.position.y,
                if verdict { "confirmed" } else { "rejected" }
            ),
        )
    }

    fn act_approach(&mut self) -> (Action, String) {
        let c = self.candidate.clone().expect("approach needs a candidate");
        let grid = self.grid.as_ref().expect("integrated");
        let here = self.pose.expect("integrated").xy();
        let start = self.current_cell();
        let best = self.distance_field().and_then(|field| {
            let mut best: Option<(Cell, f64, f64)> = None;
            for i in 0..grid.cells().len() {
                let cell = grid.cell_at(i);
                let Some(d) = field.distance(grid, cell) else { continue };
                let e = grid.cell_center(cell).distance(c.position);
                if best.is_none_or(|(_, be, bd)| e < be || (e == be && d < bd)) {
                    best = Some((cell, e, d));
                }
            }
            let (cell, e, _) = best?;
            Some((field.path_to(grid, cell)?, e, cell))
        });
        match best {
            Some((path, e, cell)) if cell != start => {
                self.approach_stalled = false;
                let waypoint = *path.waypoints.last().expect("non-empty");
                (
                    Action::MoveTo {
                        waypoint,
                        path: path.waypoints,
                    },
                    format!("approaching candidate, {e:.2} m from goal cell"),
                )
            }
            _ => {
                self.approach_stalled = true;
                (
                    Action::MoveTo {
                        waypoint: here,
                        path: vec![here],
                    },
                    "closest reachable point to the candidate".into(),
                )
            }
        }
    }

    fn act_ready(&mut self, forced: bool) -> (Action, String) {
        let image = self.current_image();
        if !forced {
            let req = prompts::ready_request(
                &self.goal.raw_instruction,
                &self.goal.target_object.text,
                &image,
                &self.rules_block,
            );
            let ready = model_gateway::ask_yes_no(self.ctx.chat, &req).map(|r| r.0).unwrap_or_else(|e| {
                log::warn!("ready check failed, answering: {e}");
                true
            });
            if !ready {
                self.pending_ready = Some(false);
                let obs = self.last_observation.as_ref().map(|o| o.0.clone()).unwrap_or_default();
                return (Action::Verify { observation_id: obs }, "not ready to answer".into());
            }
        }
        let mut images = vec![image];
        let candidate = self.candidate.as_ref().map(|c| c.position);
        let evidence = match &self.candidate {
            Some(c) => Some(c.observation_id.clone()),
            None => self
                .semantic
                .query_regions(&self.goal.target_object.embedding, 1)
                .ok()
                .and_then(|h| h.into_iter().next())
                .map(|h| h.observation_id),
        };
        if let Some(o) = evidence.and_then(|id| self.semantic.get(&id)) {
            if !images.contains(&o.image_ref) {
                images.push(o.image_ref.clone());
            }
        }
        let req = prompts::answer_request(
            &self.goal.raw_instruction,
            &self.goal.target_object.text,
            candidate,
            images,
            &self.rules_block,
        );
        let text = match model_gateway::complete(self.ctx.chat, &req) {
            Ok(c) => match c.reply {
                Reply::Text(t) => t,
                _ => c.raw,
            },
            Err(e) => {
                log::warn!("answer failed: {e}");
                String::new()
            }
        };
        let decision = format!("{}answered {text:?}", if forced { "budget exhausted, " } else { "" });
        (Action::Answer { text }, decision)
    }

    /// Episode memory for the episodic store, if anything was observed.
    pub fn into_record(self) -> Option<EpisodeRecord> {
        let grid = self.grid?;
        if self.semantic.is_empty() {
            return None;
        }
        Some(EpisodeRecord {
            episode_id: self.episode_id,
            semantic_space: self.semantic,
            physical_space: grid,
            created_at: 0,
            scene_tag: None,
        })
    }
}

/// A finished episode and its memory.
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub record: Option<EpisodeRecord>,
}

/// Steps the agent until it answers, stops, or runs out of budget.
pub fn run_episode(mut agent: Agent<'_>, env: &mut dyn Environment) -> EpisodeRun {
    let mut path_len = 0.0;
    let mut answer = None;
    let mut stopped = false;
    let mut aborted = None;
    while !agent.is_finished() && agent.steps_taken() < agent.config.step_budget {
        let sensed = match env.sense(&agent.episode_id, agent.timestep) {
            Ok(s) => s,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        let outcome = match agent.step(&sensed) {
            Ok(o) => o,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        match outcome.action {
            Action::MoveTo { path, .. } => match env.move_along(&path) {
                Ok(r) => {
                    path_len += r.distance;
                    agent.apply_move(&r);
                }
                Err(e) => {
                    aborted = Some(e.to_string());
                    break;
                }
            },
            Action::Answer { text } => answer = Some(text),
            Action::Stop => stopped = true,
            Action::Verify { .. } => {}
        }
    }
    let (success, judge_error) = match (&aborted, &answer) {
        (None, Some(a)) => env.evaluate(Some(a)),
        _ => (false, false),
    };
    let shortest_len = env.shortest_path_length();
    let result = EpisodeResult {
        episode_id: agent.episode_id.clone(),
        answer,
        success,
        steps: agent.log.len(),
        path_len,
        shortest_len,
        spl: compute_spl(success, shortest_len, path_len),
        stopped,
        judge_error,
        aborted,
        recall_source: agent.recall.as_ref().map(|r| r.source_episode_id.clone()),
        explore: agent.explore,
        log: agent.log.clone(),
        actions: agent.actions.clone(),
    };
    EpisodeRun {
        result,
        record: agent.into_record(),
    }
}
