//! Batch evaluation: suite files, suite runs with aggregate metrics, memory
//! persistence, and offline rule building.

mod config;
mod persistence;
mod suite;
mod training;

pub use config::{hex_sha256, EmbedMode, GatewayConfig, GatewayMode, HarnessConfig, JudgeMode, Services, SimConfig};
pub use persistence::{load_memory, snapshot_memory, MemoryBundle, MEMORY_VERSION};
pub use suite::{run_suite, run_suite_with, Aggregates, EpisodeRow, Metric, SuiteResult, SuiteRun, SUITE_RESULT_VERSION};
pub use training::{build_semantic_memory, TrainingReport};

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cognitive_controller::TaskKind;
use crate::simulator::{
    generate_scene, paired_revisit_suite, reference_episode, reference_scene, rule_sensitive_suite, EpisodeScript,
    Modality, RevisitPair, SceneGenConfig, SceneSpec, SensorConfig, SimError, Vocabulary,
};

pub const SUITE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("suite {0}")]
    Suite(String),
    #[error("memory format version {found} is not supported (expected {expected}); migrate the store")]
    Migration { found: u32, expected: u32 },
    #[error("integrity check failed for {file}: {reason}")]
    Integrity { file: String, reason: String },
    #[error("aggregates do not match the episode rows: {0}")]
    Aggregates(String),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether the error stems from user input rather than a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Suite(_) | Self::Sim(_))
    }
}

/// Scenes and the episodes to run in them, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub version: u32,
    pub name: String,
    pub scenes: Vec<SceneSpec>,
    pub episodes: Vec<EpisodeScript>,
    /// Episode subsets by name, e.g. the ones a metric is measured on.
    #[serde(default)]
    pub tags: std::collections::BTreeMap<String, Vec<String>>,
}

impl SuiteFile {
    pub fn new(name: &str, scenes: Vec<SceneSpec>, episodes: Vec<EpisodeScript>) -> Self {
        Self {
            version: SUITE_VERSION,
            name: name.to_string(),
            scenes,
            episodes,
            tags: Default::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != SUITE_VERSION {
            return Err(HarnessError::Suite(format!("{}: unsupported version {}", self.name, self.version)));
        }
        let vocab = Vocabulary::builtin();
        let mut names = HashSet::new();
        for s in &self.scenes {
            s.validate(vocab)?;
            if !names.insert(s.name.as_str()) {
                return Err(HarnessError::Suite(format!("duplicate scene {}", s.name)));
            }
        }
        let mut ids = HashSet::new();
        for e in &self.episodes {
            let scene = self
                .scene(&e.scene)
                .ok_or_else(|| HarnessError::Suite(format!("episode {} names unknown scene {}", e.id, e.scene)))?;
            e.validate(scene)?;
            if !ids.insert(e.id.as_str()) {
                return Err(HarnessError::Suite(format!("duplicate episode {}", e.id)));
            }
        }
        for (tag, members) in &self.tags {
            if let Some(m) = members.iter().find(|m| !ids.contains(m.as_str())) {
                return Err(HarnessError::Suite(format!("tag {tag} names unknown episode {m}")));
            }
        }
        Ok(())
    }

    pub fn scene(&self, name: &str) -> Option<&SceneSpec> {
        self.scenes.iter().find(|s| s.name == name)
    }

    pub fn tagged(&self, tag: &str) -> &[String] {
        self.tags.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let suite: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Suite(format!("{}: {e}", path.display())))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("suite serializes") + "\n";
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    pub(crate) fn shared_scenes(&self) -> Vec<Arc<SceneSpec>> {
        self.scenes.iter().cloned().map(Arc::new).collect()
    }

    /// The three-room reference scene with its single question.
    pub fn reference() -> Self {
        Self::new("reference", vec![reference_scene().clone()], vec![reference_episode()])
    }

    /// Revisit pairs: each scene is visited twice from the same spawn, first to
    /// find an object and then to answer a question about it. Tags:
    /// `revisit` (second visits), `constructed` (second visits of the
    /// constructed-coverage scenes).
    pub fn revisit(seed: u64, n_constructed: usize, n_general: usize) -> Result<Self, HarnessError> {
        let pairs = paired_revisit_suite(seed, n_constructed, n_general, Vocabulary::builtin())?;
        let mut suite = Self::new(&format!("revisit-{seed}"), Vec::new(), Vec::new());
        let mut second = Vec::new();
        let mut constructed = Vec::new();
        for RevisitPair {
            kind,
            scene,
            first,
            second: b,
        } in pairs
        {
            second.push(b.id.clone());
            if kind == crate::simulator::ScenarioKind::ConstructedCoverage {
                constructed.push(b.id.clone());
            }
            suite.scenes.push(scene);
            suite.episodes.push(first);
            suite.episodes.push(b);
        }
        suite.tags.insert("revisit".into(), second);
        suite.tags.insert("constructed".into(), constructed);
        Ok(suite)
    }

    /// Questions about an object in a named area while a same-category decoy
    /// stands elsewhere in plain view.
    pub fn rule_sensitive(seed: u64, n: usize) -> Result<Self, HarnessError> {
        let (scenes, episodes): (Vec<_>, Vec<_>) = rule_sensitive_suite(seed, n, Vocabulary::builtin())?.into_iter().unzip();
        let mut suite = Self::new(&format!("rules-{seed}"), scenes, episodes);
        let ids = suite.episodes.iter().map(|e| e.id.clone()).collect();
        suite.tags.insert("rule_sensitive".into(), ids);
        Ok(suite)
    }

    /// Random room grids with one color question each, about the object the
    /// spawn cannot see that lies farthest away.
    pub fn generated(count: usize, seed: u64, cfg: &SceneGenConfig) -> Result<Self, HarnessError> {
        let vocab = Vocabulary::builtin();
        let sensor = SensorConfig::default();
        let mut suite = Self::new(&format!("generated-{seed}"), Vec::new(), Vec::new());
        for i in 0..count as u64 {
            let s = seed.wrapping_mul(100_003).wrapping_add(i);
            let scene = generate_scene(&format!("scene-{seed}-{i}"), s, cfg, vocab)?;
            let spawn = scene.spawns[0];
            let seen = crate::simulator::visible_objects(&scene, &spawn, &sensor);
            let target = (0..scene.objects.len())
                .filter(|&o| scene.objects[o].attribute.is_some() && scene.instances(&scene.objects[o].category).count() == 1)
                .max_by(|&a, &b| {
                    let d = |o: usize| scene.objects[o].xy().distance(spawn.xy());
                    (!seen.contains(&a), d(a)).partial_cmp(&(!seen.contains(&b), d(b))).expect("finite")
                })
                .ok_or_else(|| HarnessError::Suite(format!("{} has no object to ask about", scene.name)))?;
            let obj = &scene.objects[target];
            let script = EpisodeScript::plan(
                &scene,
                &format!("{}-q", scene.name),
                &format!("What color is the {}?", obj.category),
                TaskKind::Qa,
                target,
                obj.attribute.as_deref().expect("filtered"),
                spawn,
                Modality::Description,
            )?;
            suite.scenes.push(scene);
            suite.episodes.push(script);
        }
        Ok(suite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_suites_validate() {
        SuiteFile::reference().validate().unwrap();
        let r = SuiteFile::revisit(1, 2, 2).unwrap();
        r.validate().unwrap();
        assert_eq!(r.episodes.len(), 8);
        assert_eq!(r.tagged("revisit").len(), 4);
        assert_eq!(r.tagged("constructed").len(), 2);
        SuiteFile::rule_sensitive(1, 3).unwrap().validate().unwrap();
        let g = SuiteFile::generated(3, 9, &SceneGenConfig::default()).unwrap();
        g.validate().unwrap();
        assert_eq!(g, SuiteFile::generated(3, 9, &SceneGenConfig::default()).unwrap());
    }

    #[test]
    fn validation_rejects_bad_suites() {
        let mut s = SuiteFile::reference();
        s.episodes.push(s.episodes[0].clone());
        assert!(matches!(s.validate(), Err(HarnessError::Suite(_))));
        let mut s = SuiteFile::reference();
        s.episodes[0].scene = "nowhere".into();
        assert!(s.validate().is_err());
        let mut s = SuiteFile::reference();
        s.tags.insert("x".into(), vec!["ghost".into()]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn suite_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("suite.json");
        let s = SuiteFile::revisit(3, 1, 1).unwrap();
        s.save(&p).unwrap();
        assert_eq!(SuiteFile::load(&p).unwrap(), s);
    }
}
