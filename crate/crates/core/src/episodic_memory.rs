//! Cross-episode recall: visual retrieval of past observations, locality
//! verification, episode selection by match counting, and the explore decision.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::model_gateway::{self, ChatModel, ChatRequest, GatewayError, ReplySchema, Turn};
use crate::par::{self, Execution};
use crate::physical_space::OccupancyGrid;
use crate::semantic_space::{GoalSpec, Observation, SemanticStore};
use crate::topk;

pub const DEFAULT_K_RETRIEVE: usize = 8;
pub const DEFAULT_K_MATCH: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodicError {
    #[error("episode {0:?} already stored")]
    DuplicateEpisode(String),
    #[error("episode {0:?} is incomplete: {1}")]
    Incomplete(String, &'static str),
}

/// One finished episode: what was seen and the map that was built.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub semantic_space: SemanticStore,
    pub physical_space: OccupancyGrid,
    /// Logical timestamp; larger is more recent.
    pub created_at: u64,
    pub scene_tag: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodicStore {
    records: Vec<EpisodeRecord>,
}

/// A past observation retrieved by visual similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarObservation {
    pub episode_id: String,
    pub observation_id: String,
    pub similarity: f64,
    pub image_ref: String,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreDecision {
    pub explore: bool,
    pub rationale: String,
}

/// The episode picked as prior experience and the landmarks it contributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodicRecall {
    pub source_episode_id: String,
    /// Observations of the selected episode counted into the selection.
    pub verified_observations: Vec<String>,
    pub retrieved_poses: Vec<Pose>,
    pub retrieved_images: Vec<String>,
    pub match_count: usize,
}

impl EpisodicStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, episode_id: &str) -> Option<&EpisodeRecord> {
        self.records.iter().find(|r| r.episode_id == episode_id)
    }

    /// Next logical timestamp.
    pub fn next_timestamp(&self) -> u64 {
        self.records.iter().map(|r| r.created_at + 1).max().unwrap_or(0)
    }

    pub fn append(&mut self, record: EpisodeRecord) -> Result<(), EpisodicError> {
        if self.get(&record.episode_id).is_some() {
            return Err(EpisodicError::DuplicateEpisode(record.episode_id));
        }
        if record.semantic_space.is_empty() {
            return Err(EpisodicError::Incomplete(record.episode_id, "no observations"));
        }
        if record.physical_space.known_count() == 0 {
            return Err(EpisodicError::Incomplete(record.episode_id, "empty map"));
        }
        self.records.push(record);
        Ok(())
    }

    /// Top-`k` past observations by global-embedding cosine similarity,
    /// excluding the current observation's own episode.
    pub fn retrieve_similar(&self, current: &Observation, k: usize) -> Vec<SimilarObservation> {
        self.retrieve_similar_with(current, k, Execution::default())
    }

    pub fn retrieve_similar_with(
        &self,
        current: &Observation,
        k: usize,
        exec: Execution,
    ) -> Vec<SimilarObservation> {
        let Some(query) = topk::normalized(&current.global_embedding) else {
            return Vec::new();
        };
        let rows: Vec<(usize, usize)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.episode_id != current.episode_id)
            .flat_map(|(ei, r)| (0..r.semantic_space.len()).map(move |oi| (ei, oi)))
            .collect();
        let top = topk::scan_top_k(rows.len(), k, exec, |i| {
            let (ei, oi) = rows[i];
            let g = &self.records[ei].semantic_space.observations()[oi].global_embedding;
            if g.len() == query.len() {
                topk::dot(g, &query)
            } else {
                f64::NEG_INFINITY
            }
        });
        top.into_iter()
            .filter(|(_, s)| s.is_finite())
            .map(|(i, sim)| {
                let (ei, oi) = rows[i];
                let rec = &self.records[ei];
                let o = &rec.semantic_space.observations()[oi];
                SimilarObservation {
                    episode_id: rec.episode_id.clone(),
                    observation_id: o.id.clone(),
                    similarity: sim,
                    image_ref: o.image_ref.clone(),
                    pose: o.pose,
                }
            })
            .collect()
    }
}

const LOCALITY_SYSTEM: &str = "You compare two photos taken by a household robot. Decide whether they were taken at nearby locations in the same building.";

pub fn locality_request(current_image: &str, candidate_image: &str) -> ChatRequest {
    ChatRequest::new("locality", ReplySchema::YesNo, LOCALITY_SYSTEM).turn(
        Turn::user(format!(
            "The first image is the robot's current view; the second is from memory. Were they taken near each other?\n{}",
            ReplySchema::YesNo.instruction()
        ))
        .with_images([current_image.to_string(), candidate_image.to_string()]),
    )
}

/// Keeps the candidates the adjudicator places near the current view, one
/// yes/no call per candidate, in candidate order.
pub fn verify_locality(
    candidates: &[SimilarObservation],
    current_image_ref: &str,
    mllm: &dyn ChatModel,
) -> Result<Vec<SimilarObservation>, GatewayError> {
    verify_locality_with(candidates, current_image_ref, mllm, Execution::default())
}

pub fn verify_locality_with(
    candidates: &[SimilarObservation],
    current_image_ref: &str,
    mllm: &dyn ChatModel,
    exec: Execution,
) -> Result<Vec<SimilarObservation>, GatewayError> {
    let verdicts = par::map_slice(candidates, exec, |c| {
        model_gateway::ask_yes_no(mllm, &locality_request(current_image_ref, &c.image_ref)).map(|(yes, _)| yes)
    });
    let mut out = Vec::new();
    for (c, v) in candidates.iter().zip(verdicts) {
        if v? {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// Queries every verified episode with the target embedding, pools the
/// observation-level matches scoring at least `min_similarity`, and picks the
/// episode holding most of the global top-`k`. Ties go to the most recent
/// episode.
pub fn select_episode(
    verified: &[SimilarObservation],
    goal: &GoalSpec,
    store: &EpisodicStore,
    k: usize,
    min_similarity: f64,
) -> Option<EpisodicRecall> {
    let k = k.max(1);
    let mut episodes: Vec<&EpisodeRecord> = Vec::new();
    for v in verified {
        if let Some(rec) = store.get(&v.episode_id) {
            if !episodes.iter().any(|e| e.episode_id == rec.episode_id) {
                episodes.push(rec);
            }
        }
    }
    if episodes.is_empty() {
        return None;
    }
    // (episode slot, observation index, similarity)
    let mut pooled: Vec<(usize, usize, f64)> = Vec::new();
    for (slot, rec) in episodes.iter().enumerate() {
        let Ok(hits) = rec
            .semantic_space
            .query_observations(&goal.target_object.embedding, k, Execution::default())
        else {
            continue;
        };
        pooled.extend(
            hits.into_iter()
                .filter(|h| h.similarity >= min_similarity)
                .map(|h| (slot, h.index, h.similarity)),
        );
    }
    let scored: Vec<(usize, f64)> = pooled.iter().enumerate().map(|(i, p)| (i, p.2)).collect();
    let top = topk::select_top_k(scored, k);
    let mut counts: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, _) in &top {
        let (slot, oi, _) = pooled[*i];
        counts.entry(slot).or_default().push(oi);
    }
    let (winner, obs) = counts.into_iter().max_by(|(sa, a), (sb, b)| {
        a.len()
            .cmp(&b.len())
            .then(episodes[*sa].created_at.cmp(&episodes[*sb].created_at))
    })?;
    if obs.is_empty() {
        return None;
    }
    let rec = episodes[winner];
    let observations = rec.semantic_space.observations();
    let mut poses = Vec::new();
    let mut images = Vec::new();
    let mut ids = Vec::new();
    for oi in &obs {
        let o = &observations[*oi];
        ids.push(o.id.clone());
        if !images.contains(&o.image_ref) {
            poses.push(o.pose);
            images.push(o.image_ref.clone());
        }
    }
    Some(EpisodicRecall {
        source_episode_id: rec.episode_id.clone(),
        match_count: ids.len(),
        verified_observations: ids,
        retrieved_poses: poses,
        retrieved_images: images,
    })
}

const EXPLORE_SYSTEM: &str = "You control a household robot that remembers earlier visits. Judge whether the remembered views already show where the target is, so the robot can go there without further exploration.";

pub fn explore_request(goal: &GoalSpec, recall: &EpisodicRecall) -> ChatRequest {
    ChatRequest::new("explore-decision", ReplySchema::YesNo, EXPLORE_SYSTEM).turn(
        Turn::user(format!(
            "Task: {}\nTarget: {}\nThe attached images were retrieved from a previous visit. Is further exploration required to complete the task?\n{}",
            goal.raw_instruction,
            goal.target_object.text,
            ReplySchema::YesNo.instruction()
        ))
        .with_images(recall.retrieved_images.iter().cloned()),
    )
}

/// The exploration indicator. Never fails: without a recall, or on any
/// adjudicator failure, the answer is to explore.
pub fn decide_explore(recall: Option<&EpisodicRecall>, goal: &GoalSpec, mllm: &dyn ChatModel) -> ExploreDecision {
    let Some(recall) = recall else {
        return ExploreDecision {
            explore: true,
            rationale: "no episodic recall".into(),
        };
    };
    match model_gateway::ask_yes_no(mllm, &explore_request(goal, recall)) {
        Ok((explore, raw)) => ExploreDecision {
            explore,
            rationale: raw.chars().take(200).collect(),
        },
        Err(e) => {
            log::warn!("explore decision failed, exploring: {e}");
            ExploreDecision {
                explore: true,
                rationale: "fallback".into(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::model_gateway::ScriptedChat;
    use crate::physical_space::{Cell, CellState};
    use crate::semantic_space::{Box3, GoalTerm, RegionEntry};

    fn unit(dim: usize, axis: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn grid() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(0.1, Point2::new(0.0, 0.0), 4, 4).unwrap();
        g.set(Cell::new(0, 0), CellState::Free);
        g
    }

    fn observation(ep: &str, i: usize, global: Vec<f32>, region: Vec<f32>) -> Observation {
        Observation {
            id: format!("{ep}:{i}"),
            episode_id: ep.into(),
            timestep: i as u64,
            pose: Pose::planar(i as f64, 0.0, 0.0),
            global_embedding: global,
            regions: vec![RegionEntry {
                embedding: region,
                box3d: Box3 {
                    center: [0.0; 3],
                    extents: [0.0; 3],
                },
                label: None,
            }],
            image_ref: format!("img/{ep}/{i}"),
        }
    }

    fn record(ep: &str, t: u64, obs: Vec<Observation>) -> EpisodeRecord {
        let mut s = SemanticStore::new(8);
        for o in obs {
            s.insert_observation(o).unwrap();
        }
        EpisodeRecord {
            episode_id: ep.into(),
            semantic_space: s,
            physical_space: grid(),
            created_at: t,
            scene_tag: None,
        }
    }

    fn goal(axis: usize) -> GoalSpec {
        GoalSpec {
            raw_instruction: "find it".into(),
            target_object: GoalTerm {
                text: "it".into(),
                embedding: unit(8, axis),
            },
            relative_objects: vec![],
            relative_areas: vec![],
        }
    }

    #[test]
    fn empty_store_and_self_match() {
        let store = EpisodicStore::new();
        let cur = observation("now", 0, unit(8, 3), unit(8, 3));
        assert!(store.retrieve_similar(&cur, 4).is_empty());
        let mut store = EpisodicStore::new();
        store
            .append(record("old", 0, vec![observation("old", 0, unit(8, 2), unit(8, 1)), observation("old", 1, unit(8, 3), unit(8, 1))]))
            .unwrap();
        let hits = store.retrieve_similar(&cur, 4);
        assert_eq!(hits[0].observation_id, "old:1");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn current_episode_excluded() {
        let mut store = EpisodicStore::new();
        store.append(record("now", 0, vec![observation("now", 0, unit(8, 3), unit(8, 1))])).unwrap();
        let cur = observation("now", 5, unit(8, 3), unit(8, 3));
        assert!(store.retrieve_similar(&cur, 4).is_empty());
    }

    #[test]
    fn append_rejects_duplicates_and_empty() {
        let mut store = EpisodicStore::new();
        store.append(record("a", 0, vec![observation("a", 0, unit(8, 0), unit(8, 0))])).unwrap();
        assert!(matches!(
            store.append(record("a", 1, vec![observation("a", 0, unit(8, 0), unit(8, 0))])),
            Err(EpisodicError::DuplicateEpisode(_))
        ));
        assert!(store.append(record("b", 1, vec![])).is_err());
        assert_eq!(store.next_timestamp(), 1);
    }

    fn planted(ep: &str, t: u64, hits: usize, misses: usize) -> EpisodeRecord {
        let mut obs = Vec::new();
        for i in 0..hits {
            obs.push(observation(ep, i, unit(8, 0), unit(8, 5)));
        }
        for i in hits..hits + misses {
            obs.push(observation(ep, i, unit(8, 0), unit(8, 6)));
        }
        record(ep, t, obs)
    }

    fn all_verified(store: &EpisodicStore) -> Vec<SimilarObservation> {
        store
            .records()
            .iter()
            .map(|r| SimilarObservation {
                episode_id: r.episode_id.clone(),
                observation_id: format!("{}:0", r.episode_id),
                similarity: 1.0,
                image_ref: String::new(),
                pose: Pose::planar(0.0, 0.0, 0.0),
            })
            .collect()
    }

    #[test]
    fn planted_counts_select_the_maximum() {
        let mut store = EpisodicStore::new();
        store.append(planted("a", 0, 2, 6)).unwrap();
        store.append(planted("b", 1, 5, 6)).unwrap();
        store.append(planted("c", 2, 1, 6)).unwrap();
        let recall = select_episode(&all_verified(&store), &goal(5), &store, 8, 0.5).unwrap();
        assert_eq!(recall.source_episode_id, "b");
        assert_eq!(recall.match_count, 5);
        assert_eq!(recall.retrieved_poses.len(), 5);
        assert!(select_episode(&[], &goal(5), &store, 8, 0.5).is_none());
    }

    #[test]
    fn ties_go_to_most_recent() {
        let mut store = EpisodicStore::new();
        store.append(planted("old", 0, 3, 0)).unwrap();
        store.append(planted("new", 7, 3, 0)).unwrap();
        let recall = select_episode(&all_verified(&store), &goal(5), &store, 6, 0.5).unwrap();
        assert_eq!(recall.source_episode_id, "new");
    }

    #[test]
    fn weak_matches_do_not_count() {
        let mut store = EpisodicStore::new();
        store.append(planted("a", 0, 2, 6)).unwrap();
        let recall = select_episode(&all_verified(&store), &goal(5), &store, 8, 0.5).unwrap();
        assert_eq!(recall.match_count, 2);
        let all = select_episode(&all_verified(&store), &goal(5), &store, 8, f64::NEG_INFINITY).unwrap();
        assert_eq!(all.match_count, 8);
        store.append(planted("b", 1, 0, 4)).unwrap();
        let only_b = vec![all_verified(&store)[1].clone()];
        assert!(select_episode(&only_b, &goal(5), &store, 8, 0.5).is_none());
    }

    #[test]
    fn locality_filters_in_order() {
        let cands: Vec<SimilarObservation> = (0..4)
            .map(|i| SimilarObservation {
                episode_id: "e".into(),
                observation_id: format!("e:{i}"),
                similarity: 0.9,
                image_ref: format!("scene{}", i % 2),
                pose: Pose::planar(0.0, 0.0, 0.0),
            })
            .collect();
        let yes = ScriptedChat::constant("yes");
        assert_eq!(verify_locality(&cands, "cur", &yes).unwrap(), cands);
        let no = ScriptedChat::constant("no");
        assert!(verify_locality(&cands, "cur", &no).unwrap().is_empty());
        let keyed = ScriptedChat::constant("no").on_fn(
            |r| r.images().any(|i| i == "scene1"),
            |_| Ok("yes".into()),
        );
        let kept = verify_locality(&cands, "cur", &keyed).unwrap();
        assert_eq!(
            kept.iter().map(|c| c.observation_id.as_str()).collect::<Vec<_>>(),
            vec!["e:1", "e:3"]
        );
        assert!(verify_locality(&cands, "cur", &ScriptedChat::failing("x")).is_err());
    }

    #[test]
    fn explore_decision_contract() {
        let g = goal(0);
        let chat = ScriptedChat::constant("no further exploration needed");
        assert!(decide_explore(None, &g, &chat).explore);
        assert_eq!(chat.call_count(), 0);
        let recall = EpisodicRecall {
            source_episode_id: "a".into(),
            verified_observations: vec![],
            retrieved_poses: vec![],
            retrieved_images: vec![],
            match_count: 1,
        };
        assert!(!decide_explore(Some(&recall), &g, &chat).explore);
        let d = decide_explore(Some(&recall), &g, &ScriptedChat::failing("down"));
        assert!(d.explore);
        assert_eq!(d.rationale, "fallback");
    }
}
