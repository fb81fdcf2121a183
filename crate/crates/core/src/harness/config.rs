use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::cognitive_controller::AgentConfig;
use crate::model_gateway::{ChatModel, Embedder, ScriptedChat};
use crate::semantic_space::DEFAULT_EMBEDDING_DIM;
use crate::simulator::{SceneSpec, SensorConfig, SimAdjudicator, SyntheticEmbedder, Vocabulary, DEFAULT_SIGMA};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    /// The simulator's rule-based adjudicator.
    #[default]
    Sim,
    /// Replies from a script file.
    Scripted,
    /// An OpenAI-compatible endpoint.
    Openai,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    #[default]
    Synthetic,
    Api,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    /// Normalized string matching.
    #[default]
    Normalized,
    /// The chat gateway grades answers.
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub script: Option<PathBuf>,
    pub api_base: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embed_model: String,
    pub embed: EmbedMode,
    pub judge: JudgeMode,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Sim,
            script: None,
            api_base: "https://api.openai.com/v1".into(),
            api_key: None,
            chat_model: "gpt-4o".into(),
            embed_model: "text-embedding-3-small".into(),
            embed: EmbedMode::Synthetic,
            judge: JudgeMode::Normalized,
            timeout_secs: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sensor: SensorConfig,
    pub dim: usize,
    pub sigma: f64,
    pub embed_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sensor: SensorConfig::default(),
            dim: DEFAULT_EMBEDDING_DIM,
            sigma: DEFAULT_SIGMA,
            embed_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seed: u64,
    /// Worker threads for suites without recall; 0 picks the default.
    pub jobs: usize,
    pub agent: AgentConfig,
    pub gateway: GatewayConfig,
    pub sim: SimConfig,
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.agent.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.sim.dim == 0 || !(self.sim.sigma.is_finite() && self.sim.sigma >= 0.0) {
            return Err(HarnessError::Config("sim.dim must be positive and sim.sigma non-negative".into()));
        }
        if self.sim.sensor.rays == 0 || !(self.sim.sensor.max_range > 0.0 && self.sim.sensor.fov > 0.0) {
            return Err(HarnessError::Config("sensor needs rays, range and field of view".into()));
        }
        if self.gateway.mode == GatewayMode::Scripted && self.gateway.script.is_none() {
            return Err(HarnessError::Config("scripted gateway needs gateway.script".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of everything that affects results.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.jobs = 0;
        hex_sha256(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Model endpoints and simulator features an episode runs against.
#[derive(Clone)]
pub struct Services {
    pub chat: Arc<dyn ChatModel>,
    pub judge: Option<Arc<dyn ChatModel>>,
    /// Embeds goals and questions.
    pub text: Arc<dyn Embedder>,
    /// Simulator visual features.
    pub features: Arc<SyntheticEmbedder>,
    pub sensor: SensorConfig,
    pub dim: usize,
}

impl Services {
    /// Builds the gateway the config names. The simulator adjudicator learns
    /// the given scenes.
    pub fn from_config(config: &HarnessConfig, scenes: &[Arc<SceneSpec>]) -> Result<Self, HarnessError> {
        config.validate()?;
        let vocab = Vocabulary::builtin();
        let features = Arc::new(
            SyntheticEmbedder::new(vocab, config.sim.dim, config.sim.embed_seed, config.sim.sigma)
                .map_err(|e| HarnessError::Config(e.to_string()))?,
        );
        let mut text: Arc<dyn Embedder> = features.clone();
        let chat: Arc<dyn ChatModel> = match config.gateway.mode {
            GatewayMode::Sim => Arc::new(SimAdjudicator::new(scenes.iter().cloned(), config.sim.sensor, vocab)),
            GatewayMode::Scripted => {
                let path = config.gateway.script.as_ref().expect("validated");
                Arc::new(ScriptedChat::from_file(path).map_err(|e| HarnessError::Config(e.to_string()))?)
            }
            GatewayMode::Openai => {
                let client = Arc::new(open_ai(config)?);
                if config.gateway.embed == EmbedMode::Api {
                    text = client.clone();
                }
                client
            }
        };
        let judge = match config.gateway.judge {
            JudgeMode::Normalized => None,
            JudgeMode::Model => Some(chat.clone()),
        };
        Ok(Self {
            chat,
            judge,
            text,
            features,
            sensor: config.sim.sensor,
            dim: config.sim.dim,
        })
    }
}

#[cfg(feature = "http")]
fn open_ai(config: &HarnessConfig) -> Result<crate::model_gateway::OpenAiClient, HarnessError> {
    use crate::model_gateway::{OpenAiClient, OpenAiConfig};
    let g = &config.gateway;
    if g.api_base.is_empty() || g.chat_model.is_empty() {
        return Err(HarnessError::Config("openai gateway needs api_base and chat_model".into()));
    }
    Ok(OpenAiClient::new(OpenAiConfig {
        api_base: g.api_base.clone(),
        api_key: g.api_key.clone(),
        chat_model: g.chat_model.clone(),
        embed_model: g.embed_model.clone(),
        embed_dim: config.sim.dim,
        timeout: std::time::Duration::from_secs(g.timeout_secs),
    }))
}

#[cfg(not(feature = "http"))]
fn open_ai(_: &HarnessConfig) -> Result<NoHttp, HarnessError> {
    Err(HarnessError::Config("built without the http feature".into()))
}

#[cfg(not(feature = "http"))]
struct NoHttp;

#[cfg(not(feature = "http"))]
impl ChatModel for NoHttp {
    fn send(&self, _: &crate::model_gateway::ChatRequest) -> Result<String, crate::model_gateway::GatewayError> {
        unreachable!()
    }
}

#[cfg(not(feature = "http"))]
impl Embedder for NoHttp {
    fn dim(&self) -> usize {
        0
    }
    fn embed_raw(&self, _: &str) -> Result<Vec<f32>, crate::model_gateway::GatewayError> {
        unreachable!()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_jobs_and_secrets() {
        let a = HarnessConfig::default();
        let mut b = a.clone();
        b.jobs = 8;
        b.gateway.api_key = Some("secret".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.agent.d_min = 2.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn scripted_mode_needs_a_script() {
        let mut c = HarnessConfig::default();
        c.gateway.mode = GatewayMode::Scripted;
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        assert!(matches!(Services::from_config(&c, &[]), Err(HarnessError::Config(_))));
    }
}
