//! Blocking client for OpenAI-compatible `chat/completions` and `embeddings`.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatModel, ChatRequest, Embedder, GatewayError, Role};

/// Turns an image locator into `(mime type, bytes)` at the wire boundary.
pub trait ImageResolver: Send + Sync {
    fn resolve(&self, locator: &str) -> Option<(String, Vec<u8>)>;
}

/// Resolves plain filesystem paths; anything else (simulator handles) is left out.
#[derive(Clone, Debug, Default)]
pub struct FileImageResolver;

impl ImageResolver for FileImageResolver {
    fn resolve(&self, locator: &str) -> Option<(String, Vec<u8>)> {
        let path = Path::new(locator);
        let bytes = std::fs::read(path).ok()?;
        let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(e) if e == "png" => "image/png",
            Some(e) if e == "jpg" || e == "jpeg" => "image/jpeg",
            Some(e) if e == "webp" => "image/webp",
            _ => "application/octet-stream",
        };
        Some((mime.to_string(), bytes))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenAiConfig {
    /// Base URL including the version prefix, e.g. `https://api.openai.com/v1`.
    pub api_base: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embed_model: String,
    pub embed_dim: usize,
    pub timeout: Duration,
}

pub struct OpenAiClient {
    config: OpenAiConfig,
    agent: ureq::Agent,
    images: Arc<dyn ImageResolver>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl OpenAiClient {
    pub fn new(config: OpenAiConfig) -> Self {
        Self::with_resolver(config, Arc::new(FileImageResolver))
    }

    pub fn with_resolver(config: OpenAiConfig, images: Arc<dyn ImageResolver>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            images,
        }
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.api_base.trim_end_matches('/'), path)
    }

    /// JSON body for a chat request. Temperature is pinned to 0.
    pub fn chat_body(&self, req: &ChatRequest) -> Value {
        let mut messages = vec![json!({
            "role": "system",
            "content": format!("{}\n\n{}", req.system, req.schema.instruction()).trim().to_string(),
        })];
        for turn in &req.turns {
            let role = match turn.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            if turn.images.is_empty() {
                messages.push(json!({"role": role, "content": turn.text}));
                continue;
            }
            let mut parts = vec![json!({"type": "text", "text": turn.text})];
            for locator in &turn.images {
                match self.images.resolve(locator) {
                    Some((mime, bytes)) => {
                        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                        parts.push(json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{mime};base64,{b64}")}
                        }));
                    }
                    None => parts.push(json!({
                        "type": "text",
                        "text": format!("[image unavailable: {locator}]")
                    })),
                }
            }
            messages.push(json!({"role": role, "content": parts}));
        }
        json!({
            "model": self.config.chat_model,
            "temperature": 0,
            "messages": messages,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<String, GatewayError> {
        let mut req = self.agent.post(&self.url(path));
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(body)
            .map_err(|e| GatewayError::transport(e.to_string(), true))?;
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .read_to_string()
            .map_err(|e| GatewayError::transport(e.to_string(), true))?;
        if !(200..300).contains(&status) {
            let retryable = status == 429 || status >= 500;
            return Err(GatewayError::transport(
                format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
                retryable,
            ));
        }
        Ok(text)
    }
}

impl ChatModel for OpenAiClient {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let text = self.post("chat/completions", &self.chat_body(req))?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::transport(format!("malformed response: {e}"), false))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::transport("response has no message content", false))
    }
}

impl Embedder for OpenAiClient {
    fn dim(&self) -> usize {
        self.config.embed_dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let body = json!({"model": self.config.embed_model, "input": text});
        let text = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::transport(format!("malformed response: {e}"), false))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| GatewayError::transport("response has no embedding", false))
    }
}
