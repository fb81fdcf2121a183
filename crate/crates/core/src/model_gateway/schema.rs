//! Reply parsers for the registered schemas.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplySchema {
    YesNo,
    IndexChoice { options: usize },
    GoalDecomposition,
    Workflow,
    Rules,
    FreeText,
}

impl ReplySchema {
    pub fn name(&self) -> &'static str {
        match self {
            ReplySchema::YesNo => "yes-no",
            ReplySchema::IndexChoice { .. } => "index-choice",
            ReplySchema::GoalDecomposition => "goal-decomposition",
            ReplySchema::Workflow => "workflow",
            ReplySchema::Rules => "rules",
            ReplySchema::FreeText => "free-text",
        }
    }

    /// Format instruction appended to prompts that use this schema.
    pub fn instruction(&self) -> String {
        match self {
            ReplySchema::YesNo => "Reply with a single word: yes or no.".into(),
            ReplySchema::IndexChoice { options } => format!(
                "Reply with a single integer between 0 and {} naming your choice.",
                options.saturating_sub(1)
            ),
            ReplySchema::GoalDecomposition => "Reply with JSON only: {\"target\": string, \"relative_objects\": [string], \"relative_areas\": [string]}.".into(),
            ReplySchema::Workflow => "Reply with JSON only: {\"variables\": [{\"name\": string, \"description\": string}], \"functions\": [{\"name\": string, \"description\": string}], \"body\": [string]}.".into(),
            ReplySchema::Rules => "Reply with JSON only: {\"rules\": [{\"form\": \"if-then\" | \"situation-suggestion\" | \"problem-solution\", \"anchor\": string, \"key\": string, \"value\": string}]}.".into(),
            ReplySchema::FreeText => "Reply with the answer text only.".into(),
        }
    }
}

impl fmt::Display for ReplySchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalReply {
    #[serde(alias = "target_object")]
    pub target: String,
    #[serde(default, alias = "rel_objects")]
    pub relative_objects: Vec<String>,
    #[serde(default, alias = "rel_areas")]
    pub relative_areas: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolReply {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowReply {
    #[serde(default)]
    pub variables: Vec<SymbolReply>,
    #[serde(default)]
    pub functions: Vec<SymbolReply>,
    #[serde(default)]
    pub body: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleReply {
    pub form: String,
    pub anchor: String,
    pub key: String,
    pub value: String,
}

#[derive(Deserialize)]
struct RulesEnvelope {
    rules: Vec<RuleReply>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reply {
    YesNo(bool),
    Index(usize),
    Goal(GoalReply),
    Workflow(WorkflowReply),
    Rules(Vec<RuleReply>),
    Text(String),
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d+\b").expect("valid regex"));

/// Slice of `raw` holding the outermost JSON object or array, skipping code
/// fences and prose around it.
pub fn json_payload(raw: &str) -> Option<&str> {
    let start = raw.find(['{', '['])?;
    let open = raw.as_bytes()[start];
    let close = if open == b'{' { '}' } else { ']' };
    let end = raw.rfind(close)?;
    (end > start).then(|| &raw[start..=end])
}

fn parse_yes_no(raw: &str) -> Result<bool, String> {
    if let Some(payload) = json_payload(raw) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(payload) {
            if let Some(a) = v.get("answer") {
                let s = match a {
                    serde_json::Value::Bool(b) => return Ok(*b),
                    serde_json::Value::String(s) => s.clone(),
                    _ => String::new(),
                };
                return parse_yes_no(&s);
            }
        }
    }
    let first = raw
        .trim()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    match first.as_str() {
        "yes" | "true" | "y" => Ok(true),
        "no" | "false" | "n" => Ok(false),
        _ => Err(format!("expected yes or no, got {:?}", truncate(raw, 80))),
    }
}

fn parse_index(raw: &str, options: usize) -> Result<usize, String> {
    let m = INTEGER
        .find(raw)
        .ok_or_else(|| format!("no integer in {:?}", truncate(raw, 80)))?;
    let idx: usize = m.as_str().parse().map_err(|e| format!("{e}"))?;
    if idx >= options {
        return Err(format!("index {idx} out of range for {options} options"));
    }
    Ok(idx)
}

fn parse_json<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T, String> {
    let payload = json_payload(raw).ok_or_else(|| "no JSON payload".to_string())?;
    serde_json::from_str(payload).map_err(|e| e.to_string())
}

/// Parses `raw` under `schema`.
pub fn parse_reply(schema: ReplySchema, raw: &str) -> Result<Reply, String> {
    match schema {
        ReplySchema::YesNo => parse_yes_no(raw).map(Reply::YesNo),
        ReplySchema::IndexChoice { options } => parse_index(raw, options).map(Reply::Index),
        ReplySchema::GoalDecomposition => {
            let g: GoalReply = parse_json(raw)?;
            if g.target.trim().is_empty() {
                return Err("empty target".into());
            }
            Ok(Reply::Goal(g))
        }
        ReplySchema::Workflow => {
            let w: WorkflowReply = parse_json(raw)?;
            if w.body.is_empty() {
                return Err("workflow body is empty".into());
            }
            Ok(Reply::Workflow(w))
        }
        ReplySchema::Rules => {
            let payload = json_payload(raw).ok_or_else(|| "no JSON payload".to_string())?;
            let rules = if payload.starts_with('[') {
                serde_json::from_str::<Vec<RuleReply>>(payload).map_err(|e| e.to_string())?
            } else {
                serde_json::from_str::<RulesEnvelope>(payload)
                    .map_err(|e| e.to_string())?
                    .rules
            };
            Ok(Reply::Rules(rules))
        }
        ReplySchema::FreeText => {
            let t = raw.trim();
            if t.is_empty() {
                Err("empty reply".into())
            } else {
                Ok(Reply::Text(t.to_string()))
            }
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_no_variants() {
        assert_eq!(parse_reply(ReplySchema::YesNo, "yes"), Ok(Reply::YesNo(true)));
        assert_eq!(parse_reply(ReplySchema::YesNo, " No."), Ok(Reply::YesNo(false)));
        assert_eq!(
            parse_reply(ReplySchema::YesNo, "no further exploration needed"),
            Ok(Reply::YesNo(false))
        );
        assert_eq!(
            parse_reply(ReplySchema::YesNo, "```json\n{\"answer\": \"yes\"}\n```"),
            Ok(Reply::YesNo(true))
        );
        assert!(parse_reply(ReplySchema::YesNo, "maybe").is_err());
        assert!(parse_reply(ReplySchema::YesNo, "nothing").is_err());
    }

    #[test]
    fn index_choice() {
        let s = ReplySchema::IndexChoice { options: 3 };
        assert_eq!(parse_reply(s, "2"), Ok(Reply::Index(2)));
        assert_eq!(parse_reply(s, "I pick frontier 1."), Ok(Reply::Index(1)));
        assert!(parse_reply(s, "3").is_err());
        assert!(parse_reply(s, "none").is_err());
    }

    #[test]
    fn goal_aliases() {
        let r = parse_reply(
            ReplySchema::GoalDecomposition,
            r#"{"target":"refrigerator","rel_objects":["counter"],"rel_areas":["kitchen"]}"#,
        )
        .unwrap();
        assert_eq!(
            r,
            Reply::Goal(GoalReply {
                target: "refrigerator".into(),
                relative_objects: vec!["counter".into()],
                relative_areas: vec!["kitchen".into()],
            })
        );
        let r = parse_reply(ReplySchema::GoalDecomposition, r#"{"target":"sofa"}"#).unwrap();
        assert!(matches!(r, Reply::Goal(g) if g.relative_objects.is_empty()));
    }

    #[test]
    fn workflow_body_required() {
        assert!(parse_reply(ReplySchema::Workflow, r#"{"variables":[],"functions":[],"body":[]}"#).is_err());
    }

    #[test]
    fn rules_array_or_envelope() {
        let one = r#"{"form":"if-then","anchor":"f","key":"k","value":"v"}"#;
        let a = parse_reply(ReplySchema::Rules, &format!("[{one}]")).unwrap();
        let b = parse_reply(ReplySchema::Rules, &format!("{{\"rules\":[{one}]}}")).unwrap();
        assert_eq!(a, b);
    }
}
