//! Uniform access to chat-with-images and text-embedding providers.
//!
//! Every adjudicated decision in the agent goes through [`complete`], which
//! parses the reply under a named schema and retries with a fixed corrective
//! suffix on malformed output. Providers implement [`ChatModel`] /
//! [`Embedder`]; [`ScriptedChat`] and [`HashEmbedder`] are deterministic
//! stand-ins for tests and offline runs.

mod hash_embed;
#[cfg(feature = "http")]
mod openai;
mod schema;
mod scripted;

pub use hash_embed::{fnv1a64, HashEmbedder};
#[cfg(feature = "http")]
pub use openai::{FileImageResolver, ImageResolver, OpenAiClient, OpenAiConfig};
pub use schema::{
    json_payload, parse_reply, GoalReply, Reply, ReplySchema, RuleReply, SymbolReply,
    WorkflowReply,
};
pub use scripted::{Predicate, ScriptFile, ScriptReply, ScriptRule, ScriptedChat};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topk;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("reply did not parse as {schema} after {attempts} attempt(s): {reason}")]
    Schema {
        schema: String,
        raw: String,
        reason: String,
        attempts: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn transport(message: impl Into<String>, retryable: bool) -> Self {
        GatewayError::Transport {
            message: message.into(),
            retryable,
        }
    }

    /// Raw model text attached to a schema failure.
    pub fn raw_reply(&self) -> Option<&str> {
        match self {
            GatewayError::Schema { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    /// Image locators (file paths or simulator handles), resolved to payloads
    /// only by wire clients.
    #[serde(default)]
    pub images: Vec<String>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: impl IntoIterator<Item = String>) -> Self {
        self.images.extend(images);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub turns: Vec<Turn>,
    pub schema: ReplySchema,
    pub max_retries: usize,
    /// Decision name (e.g. `verify-target`); lets scripts route requests.
    #[serde(default)]
    pub tag: String,
}

pub const DEFAULT_MAX_RETRIES: usize = 2;

pub const CORRECTIVE_SUFFIX: &str =
    "Your previous reply could not be parsed. Reply again using exactly the required format.";

impl ChatRequest {
    pub fn new(tag: impl Into<String>, schema: ReplySchema, system: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            turns: Vec::new(),
            schema,
            max_retries: DEFAULT_MAX_RETRIES,
            tag: tag.into(),
        }
    }

    pub fn turn(mut self, t: Turn) -> Self {
        self.turns.push(t);
        self
    }

    /// All prompt text, system first; what scripted predicates match against.
    pub fn full_text(&self) -> String {
        let mut s = self.system.clone();
        for t in &self.turns {
            s.push('\n');
            s.push_str(&t.text);
        }
        s
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().flat_map(|t| t.images.iter().map(String::as_str))
    }

    /// Text of the last user turn.
    pub fn last_user_text(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
            .unwrap_or("")
    }
}

/// A chat provider returning the raw reply text for a request.
pub trait ChatModel: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

/// A text-embedding provider.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, GatewayError>;
}

impl<T: ChatModel + ?Sized> ChatModel for &T {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        (**self).send(req)
    }
}

impl<T: ChatModel + ?Sized> ChatModel for std::sync::Arc<T> {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        (**self).send(req)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        (**self).embed_raw(text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub reply: Reply,
    /// Raw text of the reply that parsed.
    pub raw: String,
    pub attempts: usize,
}

/// Sends `req`, parsing the reply under its schema; on parse failure the raw
/// reply and a corrective turn are appended and the request is re-sent, up to
/// `max_retries` extra attempts.
pub fn complete(client: &dyn ChatModel, req: &ChatRequest) -> Result<Completion, GatewayError> {
    let mut req = req.clone();
    let attempts = req.max_retries + 1;
    let mut last_raw = String::new();
    let mut last_reason = String::new();
    for attempt in 1..=attempts {
        let raw = client.send(&req)?;
        match parse_reply(req.schema, &raw) {
            Ok(reply) => {
                return Ok(Completion {
                    reply,
                    raw,
                    attempts: attempt,
                })
            }
            Err(reason) => {
                log::debug!("{} reply failed {} parse: {reason}", req.tag, req.schema);
                req.turns.push(Turn {
                    role: Role::Assistant,
                    text: raw.clone(),
                    images: Vec::new(),
                });
                req.turns.push(Turn::user(format!(
                    "{CORRECTIVE_SUFFIX} {}",
                    req.schema.instruction()
                )));
                last_raw = raw;
                last_reason = reason;
            }
        }
    }
    Err(GatewayError::Schema {
        schema: req.schema.name().to_string(),
        raw: last_raw,
        reason: last_reason,
        attempts,
    })
}

/// Yes/no decision plus the raw reply text.
pub fn ask_yes_no(client: &dyn ChatModel, req: &ChatRequest) -> Result<(bool, String), GatewayError> {
    let c = complete(client, req)?;
    match c.reply {
        Reply::YesNo(b) => Ok((b, c.raw)),
        other => Err(GatewayError::Config(format!(
            "expected yes-no reply, request used {other:?}"
        ))),
    }
}

/// Embeds `text` and returns a unit vector of exactly `expected_dim` entries.
pub fn embed(client: &dyn Embedder, text: &str, expected_dim: usize) -> Result<Vec<f32>, GatewayError> {
    if client.dim() != expected_dim {
        return Err(GatewayError::Config(format!(
            "embedder dimension {} does not match configured {expected_dim}",
            client.dim()
        )));
    }
    if text.trim().is_empty() {
        return Err(GatewayError::Config("cannot embed empty text".into()));
    }
    let v = client.embed_raw(text)?;
    if v.len() != expected_dim {
        return Err(GatewayError::Config(format!(
            "provider returned {} dimensions, expected {expected_dim}",
            v.len()
        )));
    }
    topk::normalized(&v)
        .ok_or_else(|| GatewayError::transport("provider returned a zero or non-finite vector", false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(schema: ReplySchema) -> ChatRequest {
        ChatRequest::new("t", schema, "sys").turn(Turn::user("question"))
    }

    #[test]
    fn scripted_yes() {
        let chat = ScriptedChat::constant("yes");
        let c = complete(&chat, &req(ReplySchema::YesNo)).unwrap();
        assert_eq!(c.reply, Reply::YesNo(true));
        assert_eq!(c.attempts, 1);
    }

    #[test]
    fn garbage_exhausts_retries() {
        let chat = ScriptedChat::constant("purple monkey");
        let mut r = req(ReplySchema::GoalDecomposition);
        r.max_retries = 3;
        let err = complete(&chat, &r).unwrap_err();
        match err {
            GatewayError::Schema { raw, attempts, .. } => {
                assert_eq!(raw, "purple monkey");
                assert_eq!(attempts, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(chat.call_count(), 4);
        // each retry carries the corrective suffix
        let last = chat.history().pop().unwrap();
        assert!(last.last_user_text().starts_with(CORRECTIVE_SUFFIX));
    }

    #[test]
    fn recovers_after_malformed_reply() {
        let chat = ScriptedChat::sequence(&["hmm", "1"]);
        let c = complete(&chat, &req(ReplySchema::IndexChoice { options: 3 })).unwrap();
        assert_eq!(c.reply, Reply::Index(1));
        assert_eq!(c.attempts, 2);
    }

    #[test]
    fn index_choice_two_of_three() {
        let chat = ScriptedChat::constant("2");
        let c = complete(&chat, &req(ReplySchema::IndexChoice { options: 3 })).unwrap();
        assert_eq!(c.reply, Reply::Index(2));
    }

    #[test]
    fn transport_errors_are_not_retried() {
        let chat = ScriptedChat::failing("down");
        let err = complete(&chat, &req(ReplySchema::YesNo)).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { .. }));
        assert_eq!(chat.call_count(), 1);
    }

    #[test]
    fn embedding_contract() {
        let e = HashEmbedder::new(384, 7);
        let a = embed(&e, "find the red chair", 384).unwrap();
        let b = embed(&e, "find the red chair", 384).unwrap();
        assert_eq!(a, b);
        assert!((topk::l2_norm(&a) - 1.0).abs() < 1e-6);
        assert!(matches!(embed(&e, "x", 512), Err(GatewayError::Config(_))));
        assert!(matches!(embed(&e, "  ", 384), Err(GatewayError::Config(_))));
    }
}
