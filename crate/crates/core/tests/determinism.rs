use std::sync::Arc;

use proptest::prelude::*;

use himm_core::cognitive_controller::{run_episode, Agent, AgentConfig, AgentContext};
use himm_core::episodic_memory::EpisodicStore;
use himm_core::harness::{run_suite, HarnessConfig, SuiteFile};
use himm_core::par::Execution;
use himm_core::simulator::{
    reference_episode, reference_scene, SceneGenConfig, SensorConfig, SimAdjudicator, SimEnvironment,
    SyntheticEmbedder, Vocabulary,
};
use himm_core::topk::top_k_rows;

#[test]
fn reference_episode_through_the_agent_api() {
    let scene = Arc::new(reference_scene().clone());
    let script = reference_episode();
    let emb = Arc::new(SyntheticEmbedder::new(Vocabulary::builtin(), 384, 0, 0.05).unwrap());
    let adj = SimAdjudicator::new([scene.clone()], SensorConfig::default(), Vocabulary::builtin());
    let cfg = AgentConfig::default();
    let run = || {
        let ctx = AgentContext {
            chat: &adj,
            embedder: emb.as_ref(),
            episodic: None,
            rules: None,
        };
        let agent = Agent::new(ctx, cfg.clone(), &script.question, &script.id, 384).unwrap();
        let mut env =
            SimEnvironment::new(scene.clone(), script.clone(), emb.clone(), SensorConfig::default(), cfg.success_radius, None)
                .unwrap();
        run_episode(agent, &mut env).result
    };
    let a = run();
    assert!(a.success, "{}", a.log.render());
    assert_eq!(a.answer.as_deref(), Some(script.gt_answer.as_str()));
    assert_eq!(a, run());
}

#[test]
fn worker_count_does_not_change_results() {
    let suite = SuiteFile::generated(6, 3, &SceneGenConfig::default()).unwrap();
    let mut cfg = HarnessConfig::default();
    cfg.agent.recall_enabled = false;
    let json = |jobs: usize| {
        let mut c = cfg.clone();
        c.jobs = jobs;
        run_suite(&suite, &c, EpisodicStore::new(), None).unwrap().result.to_json().unwrap()
    };
    let one = json(1);
    assert_eq!(one, json(4));
    assert_eq!(one, json(1));
}

#[test]
fn recall_suite_is_repeatable() {
    let suite = SuiteFile::revisit(5, 2, 2).unwrap();
    let cfg = HarnessConfig::default();
    let a = run_suite(&suite, &cfg, EpisodicStore::new(), None).unwrap();
    let b = run_suite(&suite, &cfg, EpisodicStore::new(), None).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(a.episodes, b.episodes);
    assert_eq!(a.memory, b.memory);
}

#[test]
fn seed_reaches_the_episodes() {
    let suite = SuiteFile::generated(4, 11, &SceneGenConfig::default()).unwrap();
    let run = |seed| {
        let cfg = HarnessConfig {
            seed,
            ..HarnessConfig::default()
        };
        run_suite(&suite, &cfg, EpisodicStore::new(), None).unwrap().result
    };
    let (a, b) = (run(0), run(1));
    assert_ne!(a.config_fingerprint, b.config_fingerprint);
    assert_eq!(a.seed, 0);
    assert_eq!(b.seed, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scan_modes_agree(n in 0usize..3000, k in 0usize..40, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let dim = 16;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let matrix: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let query: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = top_k_rows(&matrix, dim, &query, k, Execution::Sequential);
        prop_assert_eq!(seq.len(), k.min(n));
        prop_assert_eq!(&seq, &top_k_rows(&matrix, dim, &query, k, Execution::default()));
    }
}
