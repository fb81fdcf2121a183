use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatModel, ChatRequest, GatewayError};

pub const SCRIPT_VERSION: u32 = 1;

/// Request filter. All present fields must match; `contains` entries are
/// case-insensitive substrings of the full prompt text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
}

impl Predicate {
    pub fn tag(tag: &str) -> Self {
        Self {
            tag: Some(tag.to_string()),
            ..Self::default()
        }
    }

    pub fn containing(mut self, needle: &str) -> Self {
        self.contains.push(needle.to_string());
        self
    }

    pub fn matches(&self, req: &ChatRequest) -> bool {
        if let Some(t) = &self.tag {
            if *t != req.tag {
                return false;
            }
        }
        if let Some(s) = &self.schema {
            if s != req.schema.name() {
                return false;
            }
        }
        if self.contains.is_empty() {
            return true;
        }
        let text = req.full_text().to_lowercase();
        self.contains.iter().all(|n| text.contains(&n.to_lowercase()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptReply {
    Text(String),
    Error { error: String },
}

impl ScriptReply {
    fn produce(&self) -> Result<String, GatewayError> {
        match self {
            ScriptReply::Text(t) => Ok(t.clone()),
            ScriptReply::Error { error } => Err(GatewayError::transport(error.clone(), true)),
        }
    }
}

/// Replies are consumed in order; the last one repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub when: Predicate,
    pub replies: Vec<ScriptReply>,
}

/// On-disk script: ordered rules plus a default reply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub version: u32,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    pub default: ScriptReply,
}

type MatchFn = Arc<dyn Fn(&ChatRequest) -> bool + Send + Sync>;
type ReplyFn = Arc<dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync>;

enum Matcher {
    When(Predicate),
    Func(MatchFn),
}

enum Responder {
    Replies { replies: Vec<ScriptReply>, cursor: usize },
    Func(ReplyFn),
}

impl Responder {
    fn respond(&mut self, req: &ChatRequest) -> Result<String, GatewayError> {
        match self {
            Responder::Replies { replies, cursor } => {
                let r = replies
                    .get(*cursor)
                    .or_else(|| replies.last())
                    .cloned()
                    .unwrap_or(ScriptReply::Text(String::new()));
                *cursor += 1;
                r.produce()
            }
            Responder::Func(f) => f(req),
        }
    }
}

struct Inner {
    rules: Vec<(Matcher, Responder)>,
    default: Responder,
    history: Vec<ChatRequest>,
}

/// Deterministic chat stand-in. Rules are checked in order; the first match
/// answers, otherwise the default does. Matching is serialized behind a lock so
/// replay order is fixed.
pub struct ScriptedChat {
    inner: Mutex<Inner>,
}

impl ScriptedChat {
    fn with_default(default: Responder) -> Self {
        Self {
            inner: Mutex::new(Inner {
                rules: Vec::new(),
                default,
                history: Vec::new(),
            }),
        }
    }

    pub fn constant(reply: &str) -> Self {
        Self::sequence(&[reply])
    }

    pub fn sequence(replies: &[&str]) -> Self {
        Self::with_default(Responder::Replies {
            replies: replies.iter().map(|r| ScriptReply::Text(r.to_string())).collect(),
            cursor: 0,
        })
    }

    pub fn failing(message: &str) -> Self {
        Self::with_default(Responder::Replies {
            replies: vec![ScriptReply::Error {
                error: message.to_string(),
            }],
            cursor: 0,
        })
    }

    pub fn from_script(script: ScriptFile) -> Result<Self, GatewayError> {
        if script.version != SCRIPT_VERSION {
            return Err(GatewayError::Config(format!(
                "unsupported script version {}",
                script.version
            )));
        }
        let chat = Self::with_default(Responder::Replies {
            replies: vec![script.default],
            cursor: 0,
        });
        for rule in script.rules {
            chat.push(Matcher::When(rule.when), Responder::Replies {
                replies: rule.replies,
                cursor: 0,
            });
        }
        Ok(chat)
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("reading {}: {e}", path.display())))?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("parsing {}: {e}", path.display())))?;
        Self::from_script(script)
    }

    fn push(&self, m: Matcher, r: Responder) {
        self.inner.lock().expect("script lock").rules.push((m, r));
    }

    /// Adds a rule answering with `replies` in order (last repeats).
    pub fn on(self, when: Predicate, replies: &[&str]) -> Self {
        self.push(Matcher::When(when), Responder::Replies {
            replies: replies.iter().map(|r| ScriptReply::Text(r.to_string())).collect(),
            cursor: 0,
        });
        self
    }

    /// Adds a programmatic rule.
    pub fn on_fn<P, R>(self, when: P, reply: R) -> Self
    where
        P: Fn(&ChatRequest) -> bool + Send + Sync + 'static,
        R: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        self.push(Matcher::Func(Arc::new(when)), Responder::Func(Arc::new(reply)));
        self
    }

    pub fn history(&self) -> Vec<ChatRequest> {
        self.inner.lock().expect("script lock").history.clone()
    }

    pub fn call_count(&self) -> usize {
        self.inner.lock().expect("script lock").history.len()
    }
}

impl ChatModel for ScriptedChat {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let mut inner = self.inner.lock().expect("script lock");
        inner.history.push(req.clone());
        let Inner { rules, default, .. } = &mut *inner;
        for (m, r) in rules.iter_mut() {
            let hit = match m {
                Matcher::When(p) => p.matches(req),
                Matcher::Func(f) => f(req),
            };
            if hit {
                return r.respond(req);
            }
        }
        default.respond(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::{ReplySchema, Turn};

    fn req(tag: &str, text: &str) -> ChatRequest {
        ChatRequest::new(tag, ReplySchema::FreeText, "").turn(Turn::user(text))
    }

    #[test]
    fn first_matching_rule_wins() {
        let chat = ScriptedChat::constant("default")
            .on(Predicate::tag("a"), &["from-a"])
            .on(Predicate::default().containing("KITCHEN"), &["kitchen-1", "kitchen-2"]);
        assert_eq!(chat.send(&req("a", "kitchen")).unwrap(), "from-a");
        assert_eq!(chat.send(&req("b", "the kitchen")).unwrap(), "kitchen-1");
        assert_eq!(chat.send(&req("b", "the kitchen")).unwrap(), "kitchen-2");
        assert_eq!(chat.send(&req("b", "the kitchen")).unwrap(), "kitchen-2");
        assert_eq!(chat.send(&req("b", "bedroom")).unwrap(), "default");
        assert_eq!(chat.call_count(), 5);
    }

    #[test]
    fn script_file_round_trip() {
        let text = r#"{
            "version": 1,
            "rules": [
                {"when": {"tag": "verify-target", "contains": ["refrigerator"]}, "replies": ["yes"]},
                {"when": {"schema": "yes-no"}, "replies": [{"error": "offline"}]}
            ],
            "default": "no"
        }"#;
        let script: ScriptFile = serde_json::from_str(text).unwrap();
        let chat = ScriptedChat::from_script(script).unwrap();
        assert_eq!(chat.send(&req("verify-target", "is this a refrigerator")).unwrap(), "yes");
        let yn = ChatRequest::new("x", ReplySchema::YesNo, "").turn(Turn::user("?"));
        assert!(chat.send(&yn).is_err());
        assert_eq!(chat.send(&req("other", "")).unwrap(), "no");
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let chat = ScriptedChat::sequence(&["1", "2", "3"]).on_fn(
                |r| r.tag == "echo",
                |r| Ok(r.last_user_text().to_uppercase()),
            );
            (0..5)
                .map(|i| chat.send(&req(if i % 2 == 0 { "echo" } else { "n" }, "hi")).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        assert_eq!(run(), vec!["HI", "1", "HI", "2", "HI"]);
    }
}
