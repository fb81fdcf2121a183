use std::collections::HashMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{HarnessConfig, HarnessError, Services, SuiteFile};
use crate::cognitive_controller::{run_episode, Agent, AgentContext, EpisodeResult, TaskKind};
use crate::episodic_memory::{EpisodeRecord, EpisodicStore};
use crate::model_gateway::fnv1a64;
use crate::par::{self, Execution};
use crate::semantic_memory::{ReasoningLog, RuleStore};
use crate::simulator::{EpisodeScript, SceneSpec, SimEnvironment};

pub const SUITE_RESULT_VERSION: u32 = 1;

/// An aggregate that is a number, or `"n/a"` when nothing contributes to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Value(f64),
    NotApplicable,
}

impl Metric {
    fn mean(sum: f64, n: usize) -> Self {
        if n == 0 {
            Metric::NotApplicable
        } else {
            Metric::Value(sum / n as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::NotApplicable => None,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v:.3}"),
            Metric::NotApplicable => f.write_str("n/a"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::NotApplicable => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Metric::Value(v)),
            Raw::Text(t) if t == "n/a" => Ok(Metric::NotApplicable),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"n/a\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub id: String,
    pub scene: String,
    pub task: TaskKind,
    pub success: bool,
    /// Whether the answer was judged correct; question episodes only.
    pub matched: Option<bool>,
    pub spl: f64,
    pub steps: usize,
    pub path_len: f64,
    pub shortest_len: f64,
    pub answer: Option<String>,
    pub stopped: bool,
    pub judge_error: bool,
    pub aborted: Option<String>,
    pub recall_source: Option<String>,
    pub explore: bool,
}

impl EpisodeRow {
    fn new(script: &EpisodeScript, r: &EpisodeResult) -> Self {
        Self {
            id: r.episode_id.clone(),
            scene: script.scene.clone(),
            task: script.task,
            success: r.success,
            matched: (script.task == TaskKind::Qa).then_some(r.success),
            spl: r.spl,
            steps: r.steps,
            path_len: r.path_len,
            shortest_len: r.shortest_len,
            answer: r.answer.clone(),
            stopped: r.stopped,
            judge_error: r.judge_error,
            aborted: r.aborted.clone(),
            recall_source: r.recall_source.clone(),
            explore: r.explore,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub success_rate: Metric,
    pub mean_spl: Metric,
    pub mean_steps: Metric,
    pub match_rate: Metric,
}

impl Aggregates {
    pub fn compute(rows: &[EpisodeRow]) -> Self {
        let n = rows.len();
        let sum = |f: &dyn Fn(&EpisodeRow) -> f64| rows.iter().map(f).sum::<f64>();
        let judged: Vec<bool> = rows.iter().filter_map(|r| r.matched).collect();
        Self {
            episodes: n,
            success_rate: Metric::mean(sum(&|r| f64::from(u8::from(r.success))), n),
            mean_spl: Metric::mean(sum(&|r| r.spl), n),
            mean_steps: Metric::mean(sum(&|r| r.steps as f64), n),
            match_rate: Metric::mean(judged.iter().filter(|m| **m).count() as f64, judged.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub version: u32,
    pub suite: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub recall: bool,
    pub rules: bool,
    pub episodes: Vec<EpisodeRow>,
    pub aggregates: Aggregates,
}

impl SuiteResult {
    pub fn new(suite: &str, config: &HarnessConfig, episodes: Vec<EpisodeRow>) -> Self {
        Self {
            version: SUITE_RESULT_VERSION,
            suite: suite.to_string(),
            seed: config.seed,
            config_fingerprint: config.fingerprint(),
            recall: config.agent.recall_enabled,
            rules: config.agent.rules_enabled,
            aggregates: Aggregates::compute(&episodes),
            episodes,
        }
    }

    /// Recomputes the aggregates from the rows.
    pub fn verify(&self) -> Result<(), HarnessError> {
        let again = Aggregates::compute(&self.episodes);
        if again != self.aggregates {
            return Err(HarnessError::Aggregates(format!("stored {:?}, recomputed {again:?}", self.aggregates)));
        }
        Ok(())
    }

    pub fn row(&self, id: &str) -> Option<&EpisodeRow> {
        self.episodes.iter().find(|r| r.id == id)
    }

    /// Aggregates over the rows whose ids are listed.
    pub fn subset(&self, ids: &[String]) -> Aggregates {
        let rows: Vec<EpisodeRow> = self.episodes.iter().filter(|r| ids.contains(&r.id)).cloned().collect();
        Aggregates::compute(&rows)
    }

    pub fn failures(&self) -> usize {
        self.episodes.iter().filter(|r| !r.success).count()
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        self.verify()?;
        Ok(serde_json::to_string_pretty(self).expect("result serializes") + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let r: Self = serde_json::from_str(text).map_err(|e| HarnessError::Suite(format!("result file: {e}")))?;
        r.verify()?;
        Ok(r)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "suite {}  seed {}  recall {}  rules {}  config {}",
            self.suite,
            self.seed,
            on_off(self.recall),
            on_off(self.rules),
            &self.config_fingerprint[..12.min(self.config_fingerprint.len())]
        );
        let w = self.episodes.iter().map(|r| r.id.len()).max().unwrap_or(7).max(7);
        let _ = writeln!(s, "{:<w$}  {:<4}  {:<4}  {:>5}  {:>7}  {:>5}  answer", "episode", "task", "ok", "steps", "path", "spl");
        for r in &self.episodes {
            let task = match r.task {
                TaskKind::Navigation => "nav",
                TaskKind::Qa => "qa",
            };
            let ok = if r.aborted.is_some() {
                "ERR"
            } else if r.success {
                "yes"
            } else {
                "no"
            };
            let _ = writeln!(
                s,
                "{:<w$}  {task:<4}  {ok:<4}  {:>5}  {:>7.2}  {:>5.3}  {}",
                r.id,
                r.steps,
                r.path_len,
                r.spl,
                r.answer.as_deref().unwrap_or("-")
            );
        }
        let a = &self.aggregates;
        let _ = writeln!(
            s,
            "episodes {}  success {}  spl {}  steps {}  match {}",
            a.episodes, a.success_rate, a.mean_spl, a.mean_steps, a.match_rate
        );
        s
    }

    /// Writes `<stem>.json` and `<stem>.txt`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()?).map_err(|e| HarnessError::io(&json, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.table()).map_err(|e| HarnessError::io(&txt, e))
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// A finished suite: the result file, the full per-episode results, and the
/// episodic store with every completed episode appended in suite order.
pub struct SuiteRun {
    pub result: SuiteResult,
    pub episodes: Vec<EpisodeResult>,
    pub memory: EpisodicStore,
}

fn aborted(script: &EpisodeScript, reason: String) -> EpisodeResult {
    EpisodeResult {
        episode_id: script.id.clone(),
        answer: None,
        success: false,
        steps: 0,
        path_len: 0.0,
        shortest_len: script.shortest_length(),
        spl: 0.0,
        stopped: false,
        judge_error: false,
        aborted: Some(reason),
        recall_source: None,
        explore: true,
        log: ReasoningLog::new(),
        actions: Vec::new(),
    }
}

struct Runner<'a> {
    config: &'a HarnessConfig,
    services: &'a Services,
    scenes: HashMap<&'a str, Arc<SceneSpec>>,
    rules: Option<&'a RuleStore>,
}

impl Runner<'_> {
    fn run(&self, script: &EpisodeScript, episodic: Option<&EpisodicStore>) -> (EpisodeResult, Option<EpisodeRecord>) {
        let mut cfg = self.config.agent.clone();
        cfg.rng_seed = self.config.seed ^ fnv1a64(script.id.as_bytes());
        let ctx = AgentContext {
            chat: self.services.chat.as_ref(),
            embedder: self.services.text.as_ref(),
            episodic: episodic.filter(|_| cfg.recall_enabled),
            rules: self.rules.filter(|_| cfg.rules_enabled),
        };
        let success_radius = cfg.success_radius;
        let agent = match Agent::new(ctx, cfg, &script.question, &script.id, self.services.dim) {
            Ok(a) => a,
            Err(e) => return (aborted(script, e.to_string()), None),
        };
        let scene = self.scenes[script.scene.as_str()].clone();
        let mut env = match SimEnvironment::new(
            scene,
            script.clone(),
            self.services.features.clone(),
            self.services.sensor,
            success_radius,
            self.services.judge.clone(),
        ) {
            Ok(e) => e,
            Err(e) => return (aborted(script, e.to_string()), None),
        };
        match catch_unwind(AssertUnwindSafe(|| run_episode(agent, &mut env))) {
            Ok(run) => (run.result, run.record),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                (aborted(script, format!("episode panicked: {msg}")), None)
            }
        }
    }
}

fn store_record(memory: &mut EpisodicStore, record: Option<EpisodeRecord>, scene: &str) {
    let Some(mut record) = record else { return };
    record.created_at = memory.next_timestamp();
    record.scene_tag = Some(scene.to_string());
    if let Err(e) = memory.append(record) {
        log::warn!("episode not stored: {e}");
    }
}

fn in_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("worker pool unavailable, using the global one: {e}"),
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    f()
}

/// Runs every episode of the suite. With recall on, episodes run in suite
/// order against one shared episodic store that grows after each episode;
/// otherwise they run on a worker pool of `config.jobs` threads. An episode
/// that fails is recorded as aborted and the suite continues.
pub fn run_suite(
    suite: &SuiteFile,
    config: &HarnessConfig,
    memory: EpisodicStore,
    rules: Option<&RuleStore>,
) -> Result<SuiteRun, HarnessError> {
    suite.validate()?;
    let services = Services::from_config(config, &suite.shared_scenes())?;
    run_suite_with(suite, config, &services, memory, rules)
}

/// [`run_suite`] with prebuilt services.
pub fn run_suite_with(
    suite: &SuiteFile,
    config: &HarnessConfig,
    services: &Services,
    mut memory: EpisodicStore,
    rules: Option<&RuleStore>,
) -> Result<SuiteRun, HarnessError> {
    config.validate()?;
    let shared = suite.shared_scenes();
    let runner = Runner {
        config,
        services,
        scenes: shared.iter().map(|s| (s.name.as_str(), s.clone())).collect(),
        rules,
    };
    let mut results = Vec::with_capacity(suite.episodes.len());
    if config.agent.recall_enabled {
        for script in &suite.episodes {
            let (r, record) = runner.run(script, Some(&memory));
            store_record(&mut memory, record, &script.scene);
            results.push(r);
        }
    } else {
        let runs = in_pool(config.jobs, || {
            par::map_slice(&suite.episodes, Execution::default(), |s| runner.run(s, None))
        });
        for (script, (r, record)) in suite.episodes.iter().zip(runs) {
            store_record(&mut memory, record, &script.scene);
            results.push(r);
        }
    }
    for r in results.iter().filter(|r| r.aborted.is_some()) {
        log::warn!("episode {} aborted: {}", r.episode_id, r.aborted.as_deref().unwrap_or(""));
    }
    let rows = suite.episodes.iter().zip(&results).map(|(s, r)| EpisodeRow::new(s, r)).collect();
    Ok(SuiteRun {
        result: SuiteResult::new(&suite.name, config, rows),
        episodes: results,
        memory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cognitive_controller::is_legal_edge;
    use proptest::prelude::*;

    fn row(id: &str, task: TaskKind, success: bool, spl: f64, steps: usize) -> EpisodeRow {
        EpisodeRow {
            id: id.into(),
            scene: "s".into(),
            task,
            success,
            matched: (task == TaskKind::Qa).then_some(success),
            spl,
            steps,
            path_len: 1.0,
            shortest_len: 1.0,
            answer: None,
            stopped: false,
            judge_error: false,
            aborted: None,
            recall_source: None,
            explore: true,
        }
    }

    #[test]
    fn empty_suite_reports_not_applicable() {
        let r = SuiteResult::new("empty", &HarnessConfig::default(), Vec::new());
        assert_eq!(r.aggregates.success_rate, Metric::NotApplicable);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"success_rate\": \"n/a\""));
        assert_eq!(SuiteResult::from_json(&json).unwrap(), r);
        assert!(r.table().contains("success n/a"));
    }

    #[test]
    fn tampered_aggregates_are_rejected() {
        let mut r = SuiteResult::new(
            "t",
            &HarnessConfig::default(),
            vec![row("a", TaskKind::Qa, true, 0.5, 3), row("b", TaskKind::Navigation, false, 0.0, 9)],
        );
        assert_eq!(r.aggregates.match_rate, Metric::Value(1.0));
        assert_eq!(r.aggregates.mean_steps, Metric::Value(6.0));
        r.aggregates.mean_spl = Metric::Value(0.9);
        assert!(matches!(r.to_json(), Err(HarnessError::Aggregates(_))));
    }

    proptest! {
        #[test]
        fn aggregates_match_brute_force(rows in proptest::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..1.0, 0usize..60), 0..30)) {
            let rows: Vec<EpisodeRow> = rows
                .iter()
                .enumerate()
                .map(|(i, (qa, ok, spl, steps))| {
                    let task = if *qa { TaskKind::Qa } else { TaskKind::Navigation };
                    row(&i.to_string(), task, *ok, if *ok { *spl } else { 0.0 }, *steps)
                })
                .collect();
            let a = Aggregates::compute(&rows);
            let n = rows.len();
            if n == 0 {
                prop_assert_eq!(a.mean_spl, Metric::NotApplicable);
            } else {
                let mut ok = 0usize;
                let mut spl = 0.0;
                let mut steps = 0usize;
                for r in &rows {
                    ok += usize::from(r.success);
                    spl += r.spl;
                    steps += r.steps;
                }
                prop_assert!((a.success_rate.value().unwrap() - ok as f64 / n as f64).abs() < 1e-12);
                prop_assert!((a.mean_spl.value().unwrap() - spl / n as f64).abs() < 1e-12);
                prop_assert!((a.mean_steps.value().unwrap() - steps as f64 / n as f64).abs() < 1e-12);
            }
            let qa: Vec<_> = rows.iter().filter(|r| r.task == TaskKind::Qa).collect();
            match a.match_rate {
                Metric::NotApplicable => prop_assert!(qa.is_empty()),
                Metric::Value(v) => {
                    let m = qa.iter().filter(|r| r.success).count() as f64 / qa.len() as f64;
                    prop_assert!((v - m).abs() < 1e-12);
                }
            }
            let r = SuiteResult::new("p", &HarnessConfig::default(), rows);
            prop_assert_eq!(SuiteResult::from_json(&r.to_json().unwrap()).unwrap(), r);
        }
    }

    #[test]
    fn reference_suite_runs_and_is_repeatable() {
        let suite = SuiteFile::reference();
        let cfg = HarnessConfig::default();
        let a = run_suite(&suite, &cfg, EpisodicStore::new(), None).unwrap();
        let b = run_suite(&suite, &cfg, EpisodicStore::new(), None).unwrap();
        assert_eq!(a.result.to_json().unwrap(), b.result.to_json().unwrap());
        assert_eq!(a.result.aggregates.success_rate, Metric::Value(1.0));
        assert_eq!(a.memory.len(), 1);
        assert!(a.episodes[0].transitions().iter().all(|(x, y)| is_legal_edge(*x, *y)));
    }

    #[test]
    fn broken_episode_is_recorded_and_suite_continues() {
        let mut suite = SuiteFile::reference();
        let mut bad = suite.episodes[0].clone();
        bad.id = "bad".into();
        bad.question = String::new();
        suite.episodes.insert(0, bad);
        let mut cfg = HarnessConfig::default();
        cfg.agent.recall_enabled = false;
        let run = run_suite(&suite, &cfg, EpisodicStore::new(), None).unwrap();
        assert!(run.result.episodes[0].aborted.is_some());
        assert!(run.result.episodes[1].success);
        assert_eq!(run.result.failures(), 1);
    }
}
