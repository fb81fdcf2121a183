use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{MemoryError, ReasoningLog};
use crate::model_gateway::{self, ChatModel, ChatRequest, Reply, ReplySchema, Turn};

pub const PSEUDOCODE_KEYWORDS: &[&str] = &[
    "if", "elif", "else", "while", "for", "in", "not", "and", "or", "return", "then", "do", "end", "true", "false",
    "none", "break", "continue", "until", "repeat", "let", "set", "to",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudocodeWorkflow {
    pub variables: Vec<Symbol>,
    pub functions: Vec<Symbol>,
    pub body: Vec<String>,
}

static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("valid regex"));
static STRING_LIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*'"#).expect("valid regex"));

impl PseudocodeWorkflow {
    pub fn new(variables: Vec<Symbol>, functions: Vec<Symbol>, body: Vec<String>) -> Result<Self, MemoryError> {
        let w = Self {
            variables,
            functions,
            body,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn declares(&self, name: &str) -> bool {
        self.variables.iter().chain(&self.functions).any(|s| s.name == name)
    }

    pub fn symbol_names(&self) -> impl Iterator<Item = &str> {
        self.variables.iter().chain(&self.functions).map(|s| s.name.as_str())
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.body.is_empty() {
            return Err(MemoryError::Validation("workflow body is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in self.symbol_names() {
            if !IDENT.find(name).is_some_and(|m| m.as_str() == name) {
                return Err(MemoryError::Validation(format!("{name:?} is not an identifier")));
            }
            if !seen.insert(name) {
                return Err(MemoryError::Validation(format!("{name:?} declared twice")));
            }
        }
        validate_body(&self.body, &seen)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("Variables:\n");
        for v in &self.variables {
            s.push_str(&format!("  {}: {}\n", v.name, v.description));
        }
        s.push_str("Functions:\n");
        for f in &self.functions {
            s.push_str(&format!("  {}: {}\n", f.name, f.description));
        }
        s.push_str("Body:\n");
        for line in &self.body {
            s.push_str(&format!("  {line}\n"));
        }
        s
    }
}

/// Every identifier outside string literals and comments must be declared or
/// a keyword. Field names after `.` are not checked.
pub fn validate_body(body: &[String], declared: &HashSet<&str>) -> Result<(), MemoryError> {
    for (n, line) in body.iter().enumerate() {
        let code = STRING_LIT.replace_all(line, "\"\"");
        let code = code.split("//").next().unwrap_or("");
        let code = code.split('#').next().unwrap_or("");
        for m in IDENT.find_iter(code) {
            let word = m.as_str();
            let prev = code[..m.start()].chars().next_back();
            if prev == Some('.') || prev.is_some_and(|c| c.is_ascii_digit()) {
                continue;
            }
            if declared.contains(word) || PSEUDOCODE_KEYWORDS.contains(&word.to_ascii_lowercase().as_str()) {
                continue;
            }
            return Err(MemoryError::Validation(format!(
                "line {} references undeclared symbol {word:?}: {line}",
                n + 1
            )));
        }
    }
    Ok(())
}

const WORKFLOW_SYSTEM: &str = "You analyse the reasoning log of an embodied robot. Identify the variables and functions that govern its decisions and organize them into a short pseudocode workflow. Body lines may only use declared names and the keywords if, elif, else, while, for, in, not, and, or, return, then, do, end, true, false, none, break, continue, until, repeat, let, set, to.";

pub fn workflow_request(log: &ReasoningLog) -> ChatRequest {
    ChatRequest::new("workflow", ReplySchema::Workflow, WORKFLOW_SYSTEM).turn(Turn::user(format!(
        "Reasoning log:\n{}\n{}",
        log.render(),
        ReplySchema::Workflow.instruction()
    )))
}

pub fn extract_pseudocode(log: &ReasoningLog, llm: &dyn ChatModel) -> Result<PseudocodeWorkflow, MemoryError> {
    if log.is_empty() {
        return Err(MemoryError::Invalid("reasoning log is empty".into()));
    }
    let c = model_gateway::complete(llm, &workflow_request(log))?;
    let Reply::Workflow(w) = c.reply else {
        unreachable!("workflow schema yields a workflow reply")
    };
    let sym = |v: Vec<model_gateway::SymbolReply>| {
        v.into_iter()
            .map(|s| Symbol {
                name: s.name.trim().to_string(),
                description: s.description,
            })
            .collect()
    };
    PseudocodeWorkflow::new(sym(w.variables), sym(w.functions), w.body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cognitive_controller::CognitiveState;
    use crate::geometry::Point2;
    use crate::model_gateway::ScriptedChat;
    use crate::semantic_memory::{LogEntry, TrajectoryPoint};

    fn log() -> ReasoningLog {
        let mut l = ReasoningLog::new();
        l.push(LogEntry {
            timestep: 0,
            state: CognitiveState::Exploration,
            decision: "moved to frontier 0".into(),
            point: TrajectoryPoint {
                timestep: 0,
                position: Point2::new(0.0, 0.0),
                state: CognitiveState::Exploration,
                image_ref: "i0".into(),
            },
        })
        .unwrap();
        l
    }

    const GOOD: &str = r#"{"variables":[{"name":"frontier","description":"chosen frontier"},{"name":"candidate","description":"possible target"}],
        "functions":[{"name":"verify_candidate","description":"check the candidate"}],
        "body":["while not candidate do set frontier to frontier.next", "if verify_candidate(candidate) then return candidate", "end"]}"#;

    #[test]
    fn scripted_counts() {
        let w = extract_pseudocode(&log(), &ScriptedChat::constant(GOOD)).unwrap();
        assert_eq!((w.variables.len(), w.functions.len(), w.body.len()), (2, 1, 3));
        assert!(w.declares("verify_candidate"));
        assert!(w.render().contains("verify_candidate: check the candidate"));
    }

    #[test]
    fn undeclared_symbol_fails_validation() {
        let bad = GOOD.replace("verify_candidate(candidate)", "look_around(candidate)");
        let err = extract_pseudocode(&log(), &ScriptedChat::constant(&bad)).unwrap_err();
        assert!(matches!(err, MemoryError::Validation(ref m) if m.contains("look_around")));
    }

    #[test]
    fn empty_body_is_an_extraction_error() {
        let chat = ScriptedChat::constant(r#"{"variables":[],"functions":[],"body":[]}"#);
        let err = extract_pseudocode(&log(), &chat).unwrap_err();
        assert!(matches!(err, MemoryError::Extraction { raw: Some(_), .. }));
        assert_eq!(chat.call_count(), 3);
    }

    #[test]
    fn literals_comments_and_numbers_are_skipped() {
        let declared: HashSet<&str> = ["x"].into_iter().collect();
        let body = vec![
            r#"set x to "anything goes here""#.to_string(),
            "if x.size > 3 then return x # trailing note".to_string(),
            "set x to 2e5 // other".to_string(),
        ];
        assert!(validate_body(&body, &declared).is_ok());
        assert!(validate_body(&["y".to_string()], &declared).is_err());
    }

    #[test]
    fn duplicate_declarations_rejected() {
        let s = Symbol {
            name: "a".into(),
            description: String::new(),
        };
        assert!(PseudocodeWorkflow::new(vec![s.clone()], vec![s], vec!["a".into()]).is_err());
    }
}
