use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeviationEvent, MemoryError, PseudocodeWorkflow, ReasoningLog};
use crate::model_gateway::{self, ChatModel, ChatRequest, Embedder, Reply, ReplySchema, Turn};
use crate::par::Execution;
use crate::semantic_space::{decode_vector, encode_vector};
use crate::topk;

pub const RULE_STORE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleForm {
    IfThen,
    SituationSuggestion,
    ProblemSolution,
}

impl RuleForm {
    pub fn tag(self) -> &'static str {
        match self {
            RuleForm::IfThen => "if-then",
            RuleForm::SituationSuggestion => "situation-suggestion",
            RuleForm::ProblemSolution => "problem-solution",
        }
    }

    /// Lenient: `IfThen`, `if_then`, `If-Then` all parse.
    pub fn parse(s: &str) -> Option<Self> {
        let k: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match k.as_str() {
            "ifthen" => Some(RuleForm::IfThen),
            "situationsuggestion" => Some(RuleForm::SituationSuggestion),
            "problemsolution" => Some(RuleForm::ProblemSolution),
            _ => None,
        }
    }
}

impl fmt::Display for RuleForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub form: RuleForm,
    pub key: String,
    pub value: String,
    pub anchor: String,
    pub source_episode_id: String,
    pub question: String,
    pub question_embedding: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    version: u32,
    dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    form: RuleForm,
    key: String,
    value: String,
    anchor: String,
    source_episode_id: String,
    question: String,
    embedding: String,
}

/// Append-only rule collection with a row-major embedding matrix for scans.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleStore {
    dim: usize,
    rules: Vec<Rule>,
    matrix: Vec<f32>,
}

impl RuleStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rules: Vec::new(),
            matrix: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn insert(&mut self, rule: Rule) -> Result<(), MemoryError> {
        if rule.question_embedding.len() != self.dim {
            return Err(MemoryError::Store(format!(
                "rule embedding has dimension {}, store expects {}",
                rule.question_embedding.len(),
                self.dim
            )));
        }
        if !topk::is_unit(&rule.question_embedding, 1e-5) {
            return Err(MemoryError::Store("rule embedding is not unit-norm".into()));
        }
        if rule.key.trim().is_empty() || rule.value.trim().is_empty() || rule.anchor.trim().is_empty() {
            return Err(MemoryError::Store("rule key, value and anchor must be non-empty".into()));
        }
        self.matrix.extend_from_slice(&rule.question_embedding);
        self.rules.push(rule);
        Ok(())
    }

    /// Top-`k` rules by cosine similarity to an already-embedded question.
    pub fn nearest(&self, query: &[f32], k: usize, exec: Execution) -> Result<Vec<(usize, f64)>, MemoryError> {
        if query.len() != self.dim {
            return Err(MemoryError::Config(format!(
                "question embedding has dimension {}, store expects {}",
                query.len(),
                self.dim
            )));
        }
        let q = topk::normalized(query).ok_or_else(|| MemoryError::Invalid("zero query vector".into()))?;
        Ok(topk::top_k_rows(&self.matrix, self.dim, &q, k, exec))
    }

    /// Text form: a header line then one JSON record per rule.
    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&StoreHeader {
            version: RULE_STORE_VERSION,
            dim: self.dim,
            count: self.rules.len(),
        })
        .expect("header serializes");
        out.push('\n');
        for r in &self.rules {
            let rec = RuleRecord {
                form: r.form,
                key: r.key.clone(),
                value: r.value.clone(),
                anchor: r.anchor.clone(),
                source_episode_id: r.source_episode_id.clone(),
                question: r.question.clone(),
                embedding: encode_vector(&r.question_embedding),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MemoryError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: StoreHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| MemoryError::Store("empty rule store file".into()))?,
        )
        .map_err(|e| MemoryError::Store(format!("bad header: {e}")))?;
        if header.version != RULE_STORE_VERSION {
            return Err(MemoryError::Store(format!(
                "unsupported rule store version {}",
                header.version
            )));
        }
        let mut store = RuleStore::new(header.dim);
        for (i, line) in lines.enumerate() {
            let rec: RuleRecord =
                serde_json::from_str(line).map_err(|e| MemoryError::Store(format!("record {i}: {e}")))?;
            store.insert(Rule {
                form: rec.form,
                key: rec.key,
                value: rec.value,
                anchor: rec.anchor,
                source_episode_id: rec.source_episode_id,
                question: rec.question,
                question_embedding: decode_vector(&rec.embedding)
                    .map_err(|e| MemoryError::Store(format!("record {i}: {e}")))?,
            })?;
        }
        if store.len() != header.count {
            return Err(MemoryError::Store(format!(
                "header says {} rules, found {}",
                header.count,
                store.len()
            )));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        std::fs::write(path, self.to_text()).map_err(|e| MemoryError::Store(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| MemoryError::Store(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleExtraction {
    pub rules: Vec<Rule>,
    /// Replies that failed form or anchor validation.
    pub dropped: usize,
}

const RULES_SYSTEM: &str = "You distill reusable lessons from an embodied robot's run. Compare its reasoning with the correct answer and the moments it drifted from the reference path, then state high-level rules in canonical forms (if-then, situation-suggestion, problem-solution). Anchor every rule to one variable or function of the workflow.";

pub fn rules_request(
    gt_answer: &str,
    instruction: &str,
    log: &ReasoningLog,
    workflow: &PseudocodeWorkflow,
    events: &[DeviationEvent],
) -> ChatRequest {
    let mut text = format!(
        "Question: {instruction}\nCorrect answer: {gt_answer}\n\nReasoning log:\n{}\nWorkflow:\n{}",
        log.render(),
        workflow.render()
    );
    let mut images = Vec::new();
    if !events.is_empty() {
        text.push_str("\nDeviations (one image each, in order):\n");
        for e in events {
            text.push_str(&format!(
                "t={} distance {:.2} m above threshold {:.2} m\n",
                e.timestep, e.h_value, e.threshold_used
            ));
            images.push(e.image_ref.clone());
        }
    }
    text.push('\n');
    text.push_str(&ReplySchema::Rules.instruction());
    ChatRequest::new("rules", ReplySchema::Rules, RULES_SYSTEM).turn(Turn::user(text).with_images(images))
}

/// Asks the model for rules and keeps those whose form parses and whose
/// anchor the workflow declares.
#[allow(clippy::too_many_arguments)]
pub fn extract_rules(
    gt_answer: &str,
    instruction: &str,
    log: &ReasoningLog,
    workflow: &PseudocodeWorkflow,
    events: &[DeviationEvent],
    mllm: &dyn ChatModel,
    embedder: &dyn Embedder,
    dim: usize,
    source_episode_id: &str,
) -> Result<RuleExtraction, MemoryError> {
    workflow.validate()?;
    let c = model_gateway::complete(mllm, &rules_request(gt_answer, instruction, log, workflow, events))?;
    let Reply::Rules(replies) = c.reply else {
        unreachable!("rules schema yields rules")
    };
    let mut rules = Vec::new();
    let mut dropped = 0;
    let mut question_embedding = None;
    for r in replies {
        let anchor = r.anchor.trim();
        let Some(form) = RuleForm::parse(&r.form) else {
            log::warn!("dropping rule with unknown form {:?}", r.form);
            dropped += 1;
            continue;
        };
        if !workflow.declares(anchor) || r.key.trim().is_empty() || r.value.trim().is_empty() {
            log::warn!("dropping rule anchored to {anchor:?}");
            dropped += 1;
            continue;
        }
        if question_embedding.is_none() {
            question_embedding = Some(model_gateway::embed(embedder, instruction, dim)?);
        }
        rules.push(Rule {
            form,
            key: r.key.trim().to_string(),
            value: r.value.trim().to_string(),
            anchor: anchor.to_string(),
            source_episode_id: source_episode_id.to_string(),
            question: instruction.to_string(),
            question_embedding: question_embedding.clone().expect("set above"),
        });
    }
    Ok(RuleExtraction { rules, dropped })
}

pub fn retrieve_rules(
    store: &RuleStore,
    question: &str,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<(Rule, f64)>, MemoryError> {
    retrieve_rules_with(store, question, embedder, k, Execution::default())
}

pub fn retrieve_rules_with(
    store: &RuleStore,
    question: &str,
    embedder: &dyn Embedder,
    k: usize,
    exec: Execution,
) -> Result<Vec<(Rule, f64)>, MemoryError> {
    if store.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let q = model_gateway::embed(embedder, question, store.dim())?;
    Ok(store
        .nearest(&q, k, exec)?
        .into_iter()
        .map(|(i, s)| (store.rules()[i].clone(), s))
        .collect())
}

/// One block per rule, in the given order.
pub fn format_rules_for_prompt(rules: &[Rule]) -> String {
    rules
        .iter()
        .map(|r| format!("[{}] ({})\n{} -> {}\n", r.anchor, r.form, r.key, r.value))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::{HashEmbedder, ScriptedChat};
    use crate::semantic_memory::Symbol;

    fn workflow() -> PseudocodeWorkflow {
        PseudocodeWorkflow::new(
            vec![Symbol {
                name: "candidate".into(),
                description: String::new(),
            }],
            vec![Symbol {
                name: "verify_candidate".into(),
                description: String::new(),
            }],
            vec!["if verify_candidate(candidate) then return candidate".into()],
        )
        .unwrap()
    }

    fn rule(q: &str, e: &HashEmbedder) -> Rule {
        Rule {
            form: RuleForm::IfThen,
            key: "k".into(),
            value: "v".into(),
            anchor: "candidate".into(),
            source_episode_id: "ep".into(),
            question: q.into(),
            question_embedding: model_gateway::embed(e, q, e.dim()).unwrap(),
        }
    }

    #[test]
    fn one_anchored_rule() {
        let chat = ScriptedChat::constant(
            r#"{"rules":[{"form":"IfThen","anchor":"verify_candidate","key":"the object is in the wrong room","value":"reject it"}]}"#,
        );
        let e = HashEmbedder::new(16, 1);
        let out = extract_rules("red", "what color is the mug", &ReasoningLog::new(), &workflow(), &[], &chat, &e, 16, "ep1")
            .unwrap();
        assert_eq!(out.rules.len(), 1);
        assert_eq!(out.dropped, 0);
        assert_eq!(out.rules[0].form, RuleForm::IfThen);
        assert!(chat.history()[0].images().next().is_none());
        let q = model_gateway::embed(&e, "what color is the mug", 16).unwrap();
        assert_eq!(out.rules[0].question_embedding, q);
    }

    #[test]
    fn undeclared_anchor_dropped() {
        let chat = ScriptedChat::constant(r#"[{"form":"if-then","anchor":"teleport","key":"a","value":"b"},{"form":"haiku","anchor":"candidate","key":"a","value":"b"}]"#);
        let e = HashEmbedder::new(16, 1);
        let out = extract_rules("x", "q", &ReasoningLog::new(), &workflow(), &[], &chat, &e, 16, "ep").unwrap();
        assert!(out.rules.is_empty());
        assert_eq!(out.dropped, 2);
    }

    #[test]
    fn deviations_attach_images() {
        let chat = ScriptedChat::constant(r#"{"rules":[]}"#);
        let e = HashEmbedder::new(16, 1);
        let ev = DeviationEvent {
            timestep: 4,
            h_value: 1.0,
            threshold_used: 0.5,
            image_ref: "img4".into(),
        };
        extract_rules("x", "q", &ReasoningLog::new(), &workflow(), &[ev], &chat, &e, 16, "ep").unwrap();
        let req = &chat.history()[0];
        assert_eq!(req.images().collect::<Vec<_>>(), vec!["img4"]);
        assert!(req.full_text().contains("t=4"));
        assert!(extract_rules("x", "q", &ReasoningLog::new(), &workflow(), &[], &ScriptedChat::failing("down"), &e, 16, "ep").is_err());
    }

    #[test]
    fn self_similarity_ranks_first() {
        let e = HashEmbedder::new(32, 3);
        let mut store = RuleStore::new(32);
        for q in ["where is the sofa", "what color is the mug", "is the oven on"] {
            store.insert(rule(q, &e)).unwrap();
        }
        let hits = retrieve_rules(&store, "what color is the mug", &e, 2).unwrap();
        assert_eq!(hits[0].0.question, "what color is the mug");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
        assert!(retrieve_rules(&RuleStore::new(32), "x", &e, 3).unwrap().is_empty());
    }

    #[test]
    fn ties_follow_insertion_order() {
        let e = HashEmbedder::new(8, 0);
        let mut store = RuleStore::new(8);
        for v in ["first", "second", "third"] {
            let mut r = rule("same question", &e);
            r.value = v.into();
            store.insert(r).unwrap();
        }
        let hits = retrieve_rules(&store, "same question", &e, 3).unwrap();
        let values: Vec<&str> = hits.iter().map(|(r, _)| r.value.as_str()).collect();
        assert_eq!(values, vec!["first", "second", "third"]);
    }

    #[test]
    fn rendering_contract() {
        assert_eq!(format_rules_for_prompt(&[]), "");
        let e = HashEmbedder::new(8, 0);
        let r = rule("q", &e);
        let s = format_rules_for_prompt(std::slice::from_ref(&r));
        for part in ["candidate", "if-then", "k", "v"] {
            assert!(s.contains(part));
        }
        assert_eq!(s, format_rules_for_prompt(&[r]));
    }

    #[test]
    fn store_text_round_trip() {
        let e = HashEmbedder::new(8, 0);
        let mut store = RuleStore::new(8);
        store.insert(rule("a question", &e)).unwrap();
        store.insert(rule("another one", &e)).unwrap();
        let text = store.to_text();
        let back = RuleStore::from_text(&text).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_text(), text);
        let truncated: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(RuleStore::from_text(&truncated).is_err());
        assert!(RuleStore::from_text(&text.replace("\"version\":1", "\"version\":2")).is_err());
    }

    #[test]
    fn form_parsing() {
        assert_eq!(RuleForm::parse("Situation_Suggestion"), Some(RuleForm::SituationSuggestion));
        assert_eq!(RuleForm::parse("problem-solution"), Some(RuleForm::ProblemSolution));
        assert_eq!(RuleForm::parse("if"), None);
    }
}
