use super::{run_suite_with, HarnessConfig, HarnessError, Services, SuiteFile, SuiteRun};
use crate::episodic_memory::EpisodicStore;
use crate::semantic_memory::{detect_log_deviations, extract_pseudocode, extract_rules, RuleStore, ThresholdSchedule};

pub struct TrainingReport {
    pub run: SuiteRun,
    pub rules: RuleStore,
    /// Rule replies dropped for a bad form or anchor.
    pub dropped: usize,
    /// Episodes that produced no rules, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Runs the suite with recall and rules off, then distills rules from each
/// episode's log, deviations from the reference path, and the correct answer.
/// New rules are added to `rules`.
pub fn build_semantic_memory(
    suite: &SuiteFile,
    config: &HarnessConfig,
    mut rules: RuleStore,
) -> Result<TrainingReport, HarnessError> {
    suite.validate()?;
    let services = Services::from_config(config, &suite.shared_scenes())?;
    if rules.dim() != services.dim {
        return Err(HarnessError::Config(format!(
            "rule store has dimension {}, embeddings have {}",
            rules.dim(),
            services.dim
        )));
    }
    let mut cfg = config.clone();
    cfg.agent.recall_enabled = false;
    cfg.agent.rules_enabled = false;
    let run = run_suite_with(suite, &cfg, &services, EpisodicStore::new(), None)?;
    let mut dropped = 0;
    let mut skipped = Vec::new();
    for (script, result) in suite.episodes.iter().zip(&run.episodes) {
        let mut skip = |reason: String| {
            log::warn!("no rules from {}: {reason}", script.id);
            skipped.push((script.id.clone(), reason));
        };
        if let Some(r) = &result.aborted {
            skip(format!("aborted: {r}"));
            continue;
        }
        if result.log.is_empty() {
            skip("empty log".into());
            continue;
        }
        let schedule = ThresholdSchedule {
            rng_seed: config.seed ^ crate::model_gateway::fnv1a64(script.id.as_bytes()),
            ..ThresholdSchedule::default()
        };
        let deviations = match detect_log_deviations(&result.log, &script.gt_trajectory, &schedule) {
            Ok(d) => d,
            Err(e) => {
                skip(e.to_string());
                continue;
            }
        };
        let workflow = match extract_pseudocode(&result.log, services.chat.as_ref()) {
            Ok(w) => w,
            Err(e) => {
                skip(e.to_string());
                continue;
            }
        };
        let extraction = match extract_rules(
            &script.gt_answer,
            &script.question,
            &result.log,
            &workflow,
            &deviations.events,
            services.chat.as_ref(),
            services.text.as_ref(),
            services.dim,
            &script.id,
        ) {
            Ok(x) => x,
            Err(e) => {
                skip(e.to_string());
                continue;
            }
        };
        dropped += extraction.dropped;
        for rule in extraction.rules {
            if let Err(e) = rules.insert(rule) {
                skip(e.to_string());
            }
        }
    }
    Ok(TrainingReport {
        run,
        rules,
        dropped,
        skipped,
    })
}
