//! Pose-indexed store of embedded observations with tiered goal retrieval.
//!
//! Retrieval is an exact brute-force scan over a contiguous embedding matrix;
//! ties are broken by insertion order so results are reproducible.

mod goal;
mod snapshot;

pub use goal::{decompose_goal, GoalSpec, GoalTerm};
pub use snapshot::{decode_vector, encode_vector, SemanticSnapshot, SEMANTIC_SNAPSHOT_VERSION};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::par::Execution;
use crate::topk;

pub const DEFAULT_EMBEDDING_DIM: usize = 384;
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;
/// Queries within this distance of unit norm are renormalized silently.
pub const QUERY_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("observation id {0:?} already stored")]
    DuplicateId(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown observation id {0:?}")]
    MissingObservation(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub center: [f64; 3],
    pub extents: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub embedding: Vec<f32>,
    pub box3d: Box3,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub episode_id: String,
    pub timestep: u64,
    pub pose: Pose,
    pub global_embedding: Vec<f32>,
    pub regions: Vec<RegionEntry>,
    pub image_ref: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PriorityTier {
    Target = 0,
    RelativeObject = 1,
    RelativeArea = 2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionHit {
    pub observation_id: String,
    pub region_index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub observation_id: String,
    pub region_index: Option<usize>,
    pub similarity: f64,
    pub priority_tier: PriorityTier,
}

/// Observation-level hit: the best region similarity within one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationHit {
    pub index: usize,
    pub region_index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticStore {
    dim: usize,
    observations: Vec<Observation>,
    by_id: HashMap<String, usize>,
    /// Row-major region embeddings, one row per region in insertion order.
    region_matrix: Vec<f32>,
    /// `(observation index, region index)` per matrix row.
    region_rows: Vec<(usize, usize)>,
}

impl Default for SemanticStore {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl SemanticStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            observations: Vec::new(),
            by_id: HashMap::new(),
            region_matrix: Vec::new(),
            region_rows: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn region_count(&self) -> usize {
        self.region_rows.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, id: &str) -> Option<&Observation> {
        self.by_id.get(id).map(|i| &self.observations[*i])
    }

    fn check_vector(&self, what: &str, v: &[f32]) -> Result<(), SemanticError> {
        if v.len() != self.dim {
            return Err(SemanticError::InvalidObservation(format!(
                "{what} has dimension {}, store expects {}",
                v.len(),
                self.dim
            )));
        }
        if !topk::is_unit(v, UNIT_NORM_TOLERANCE) {
            return Err(SemanticError::InvalidObservation(format!(
                "{what} is not unit-norm (|v| = {})",
                topk::l2_norm(v)
            )));
        }
        Ok(())
    }

    /// Appends an observation. Rejects duplicate ids and malformed embeddings,
    /// leaving the store unchanged.
    pub fn insert_observation(&mut self, obs: Observation) -> Result<(), SemanticError> {
        if self.by_id.contains_key(&obs.id) {
            return Err(SemanticError::DuplicateId(obs.id));
        }
        self.check_vector("global embedding", &obs.global_embedding)?;
        for (i, r) in obs.regions.iter().enumerate() {
            self.check_vector(&format!("region {i} embedding"), &r.embedding)?;
            if r.box3d.extents.iter().any(|e| !(e.is_finite() && *e >= 0.0))
                || r.box3d.center.iter().any(|c| !c.is_finite())
            {
                return Err(SemanticError::InvalidObservation(format!(
                    "region {i} has an invalid box"
                )));
            }
        }
        if !obs.pose.is_finite() {
            return Err(SemanticError::InvalidObservation("non-finite pose".into()));
        }
        let idx = self.observations.len();
        for (ri, r) in obs.regions.iter().enumerate() {
            self.region_matrix.extend_from_slice(&r.embedding);
            self.region_rows.push((idx, ri));
        }
        self.by_id.insert(obs.id.clone(), idx);
        self.observations.push(obs);
        Ok(())
    }

    /// Validates and normalizes a query vector.
    pub fn prepare_query(&self, query: &[f32]) -> Result<Vec<f32>, SemanticError> {
        if query.len() != self.dim {
            return Err(SemanticError::InvalidQuery(format!(
                "query has dimension {}, store expects {}",
                query.len(),
                self.dim
            )));
        }
        let n = topk::l2_norm(query);
        if !n.is_finite() || (n - 1.0).abs() > QUERY_NORM_TOLERANCE {
            return Err(SemanticError::InvalidQuery(format!(
                "query norm {n} is not within {QUERY_NORM_TOLERANCE} of 1"
            )));
        }
        Ok(topk::normalized(query).expect("norm is near one"))
    }

    /// Top-`k` regions by cosine similarity, descending.
    pub fn query_regions(&self, query: &[f32], k: usize) -> Result<Vec<RegionHit>, SemanticError> {
        self.query_regions_with(query, k, Execution::default())
    }

    pub fn query_regions_with(
        &self,
        query: &[f32],
        k: usize,
        exec: Execution,
    ) -> Result<Vec<RegionHit>, SemanticError> {
        if k == 0 {
            return Err(SemanticError::InvalidQuery("k must be at least 1".into()));
        }
        let q = self.prepare_query(query)?;
        Ok(topk::top_k_rows(&self.region_matrix, self.dim, &q, k, exec)
            .into_iter()
            .map(|(row, sim)| {
                let (oi, ri) = self.region_rows[row];
                RegionHit {
                    observation_id: self.observations[oi].id.clone(),
                    region_index: ri,
                    similarity: sim,
                }
            })
            .collect())
    }

    /// Per observation, its best-matching region; top-`k` observations by that score.
    pub fn query_observations(
        &self,
        query: &[f32],
        k: usize,
        exec: Execution,
    ) -> Result<Vec<ObservationHit>, SemanticError> {
        if k == 0 {
            return Err(SemanticError::InvalidQuery("k must be at least 1".into()));
        }
        let q = self.prepare_query(query)?;
        let sims = crate::par::map_range(self.region_rows.len(), exec, |row| {
            topk::dot(&self.region_matrix[row * self.dim..(row + 1) * self.dim], &q)
        });
        let mut best: Vec<Option<(usize, f64)>> = vec![None; self.observations.len()];
        for (row, sim) in sims.into_iter().enumerate() {
            let (oi, ri) = self.region_rows[row];
            match best[oi] {
                Some((_, s)) if s >= sim => {}
                _ => best[oi] = Some((ri, sim)),
            }
        }
        let scored: Vec<(usize, f64)> = best
            .iter()
            .enumerate()
            .filter_map(|(oi, b)| b.map(|(_, s)| (oi, s)))
            .collect();
        Ok(topk::select_top_k(scored, k)
            .into_iter()
            .map(|(oi, s)| ObservationHit {
                index: oi,
                region_index: best[oi].expect("scored").0,
                similarity: s,
            })
            .collect())
    }

    /// Top-`k` observations by global-embedding similarity.
    pub fn query_global(&self, query: &[f32], k: usize, exec: Execution) -> Result<Vec<(usize, f64)>, SemanticError> {
        let q = self.prepare_query(query)?;
        Ok(topk::scan_top_k(self.observations.len(), k, exec, |i| {
            topk::dot(&self.observations[i].global_embedding, &q)
        }))
    }

    /// Tiered retrieval: target matches first, then relative objects, then
    /// relative areas; similarity descending within a tier. At most `k` per tier.
    pub fn query_goal(&self, goal: &GoalSpec, k: usize) -> Result<Vec<RankedMatch>, SemanticError> {
        let mut out = Vec::new();
        for (tier, terms) in goal.tiers() {
            let mut pooled: Vec<(usize, f64)> = Vec::new();
            let mut rows_seen: HashMap<usize, usize> = HashMap::new();
            for term in terms {
                let q = self.prepare_query(&term.embedding)?;
                for (row, sim) in topk::top_k_rows(&self.region_matrix, self.dim, &q, k, Execution::default()) {
                    match rows_seen.get(&row) {
                        Some(&pos) if pooled[pos].1 >= sim => {}
                        Some(&pos) => pooled[pos].1 = sim,
                        None => {
                            rows_seen.insert(row, pooled.len());
                            pooled.push((row, sim));
                        }
                    }
                }
            }
            for (row, sim) in topk::select_top_k(pooled, k) {
                let (oi, ri) = self.region_rows[row];
                out.push(RankedMatch {
                    observation_id: self.observations[oi].id.clone(),
                    region_index: Some(ri),
                    similarity: sim,
                    priority_tier: tier,
                });
            }
        }
        Ok(out)
    }

    /// Poses of the matched observations, deduplicated, in match order.
    pub fn poses_of(&self, matches: &[RankedMatch]) -> Result<Vec<Pose>, SemanticError> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for m in matches {
            let obs = self
                .get(&m.observation_id)
                .ok_or_else(|| SemanticError::MissingObservation(m.observation_id.clone()))?;
            if seen.insert(obs.id.as_str()) {
                out.push(obs.pose);
            }
        }
        Ok(out)
    }

    pub fn region(&self, observation_id: &str, region_index: usize) -> Option<&RegionEntry> {
        self.get(observation_id)?.regions.get(region_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit(dim: usize, axis: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn obs(id: &str, dim: usize, axes: &[usize]) -> Observation {
        Observation {
            id: id.into(),
            episode_id: "e".into(),
            timestep: 0,
            pose: Pose::planar(id.len() as f64, 0.0, 0.0),
            global_embedding: unit(dim, 0),
            regions: axes
                .iter()
                .map(|a| RegionEntry {
                    embedding: unit(dim, *a),
                    box3d: Box3 {
                        center: [0.0; 3],
                        extents: [0.1; 3],
                    },
                    label: None,
                })
                .collect(),
            image_ref: format!("img/{id}"),
        }
    }

    #[test]
    fn insert_fetch_and_duplicates() {
        let mut s = SemanticStore::new(4);
        s.insert_observation(obs("a", 4, &[1])).unwrap();
        assert_eq!(s.get("a").unwrap().id, "a");
        let before = s.clone();
        assert!(matches!(
            s.insert_observation(obs("a", 4, &[2])),
            Err(SemanticError::DuplicateId(_))
        ));
        assert_eq!(s, before);
        let mut bad = obs("b", 4, &[1]);
        bad.regions[0].embedding = vec![0.5, 0.5, 0.0, 0.0];
        assert!(s.insert_observation(bad).is_err());
        assert!(s.insert_observation(obs("c", 3, &[1])).is_err());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn self_retrieval_and_empty_store() {
        let mut s = SemanticStore::new(4);
        assert!(s.query_regions(&unit(4, 1), 3).unwrap().is_empty());
        s.insert_observation(obs("a", 4, &[1, 2])).unwrap();
        s.insert_observation(obs("bb", 4, &[3])).unwrap();
        let hits = s.query_regions(&unit(4, 3), 2).unwrap();
        assert_eq!(hits[0].observation_id, "bb");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        assert_eq!(hits.len(), 2);
        // tie between region (a,0) and (a,1)? both 0 similarity: insertion order
        assert_eq!(hits[1].observation_id, "a");
        assert_eq!(hits[1].region_index, 0);
    }

    #[test]
    fn query_normalization_rules() {
        let mut s = SemanticStore::new(2);
        s.insert_observation(obs("a", 2, &[0])).unwrap();
        assert!(s.query_regions(&[1.0005, 0.0], 1).is_ok());
        assert!(matches!(s.query_regions(&[2.0, 0.0], 1), Err(SemanticError::InvalidQuery(_))));
        assert!(matches!(s.query_regions(&[1.0], 1), Err(SemanticError::InvalidQuery(_))));
        assert!(s.query_regions(&[1.0, 0.0], 0).is_err());
    }

    fn term(dim: usize, axis: usize) -> GoalTerm {
        GoalTerm {
            text: format!("axis{axis}"),
            embedding: unit(dim, axis),
        }
    }

    #[test]
    fn target_tier_dominates() {
        let mut s = SemanticStore::new(4);
        let mut o = obs("a", 4, &[]);
        o.regions = vec![
            RegionEntry {
                embedding: vec![0.1, 0.0, (1.0f32 - 0.01).sqrt(), 0.0],
                box3d: Box3 { center: [0.0; 3], extents: [0.0; 3] },
                label: None,
            },
            RegionEntry {
                embedding: vec![0.0, 0.0, 0.0, 1.0],
                box3d: Box3 { center: [0.0; 3], extents: [0.0; 3] },
                label: None,
            },
        ];
        s.insert_observation(o).unwrap();
        let goal = GoalSpec {
            raw_instruction: "q".into(),
            target_object: term(4, 0),
            relative_objects: vec![],
            relative_areas: vec![GoalTerm {
                text: "area".into(),
                embedding: vec![0.0, 0.0, 0.99, (1.0f32 - 0.99 * 0.99).sqrt()],
            }],
        };
        let m = s.query_goal(&goal, 1).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].priority_tier, PriorityTier::Target);
        assert!(m[0].similarity < 0.2);
        assert_eq!(m[1].priority_tier, PriorityTier::RelativeArea);
        assert!(m[1].similarity > 0.9);
    }

    #[test]
    fn poses_are_deduplicated() {
        let mut s = SemanticStore::new(4);
        s.insert_observation(obs("a", 4, &[1, 2])).unwrap();
        assert!(s.poses_of(&[]).unwrap().is_empty());
        let m = |ri| RankedMatch {
            observation_id: "a".into(),
            region_index: Some(ri),
            similarity: 1.0,
            priority_tier: PriorityTier::Target,
        };
        assert_eq!(s.poses_of(&[m(0), m(1)]).unwrap().len(), 1);
        let dangling = RankedMatch {
            observation_id: "zzz".into(),
            ..m(0)
        };
        assert!(matches!(s.poses_of(&[dangling]), Err(SemanticError::MissingObservation(_))));
    }
}
