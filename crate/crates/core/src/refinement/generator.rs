use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::provider::{cache_key, CacheSlot, CallStats, HttpJsonClient, ProviderError, RetryPolicy, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

pub trait DescriptionGenerator: Send + Sync {
    fn descriptor(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

/// Returns the last non-empty line of the last message.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl DescriptionGenerator for EchoGenerator {
    fn descriptor(&self) -> String {
        "echo".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request
            .messages
            .last()
            .and_then(|m| m.content.lines().rev().map(str::trim).find(|l| !l.is_empty()))
            .map(str::to_string)
            .ok_or_else(|| ProviderError::InvalidResponse("nothing to echo".into()))
    }
}

/// Chat-completion endpoint: POST {model, messages, temperature, seed} → {text}.
/// Pair with a cassette transport for record/replay.
pub struct HttpGenerator {
    client: HttpJsonClient,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        // Retries are applied by the refinement loop, not per request.
        HttpGenerator { client: HttpJsonClient::new(endpoint, transport, RetryPolicy::no_backoff(0)) }
    }

    pub fn with_token_env(mut self, var: impl Into<String>) -> Self {
        self.client = self.client.with_token_env(var);
        self
    }
}

impl DescriptionGenerator for HttpGenerator {
    fn descriptor(&self) -> String {
        format!("http:{}", self.client.base_url())
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let (resp, _): (ChatResponse, _) = self.client.post("", request)?;
        Ok(resp.text)
    }
}

/// Serves repeated requests from a response cache. Keys cover the inner
/// generator, the template hash and the full request.
pub struct CachedGenerator {
    inner: Arc<dyn DescriptionGenerator>,
    slot: CacheSlot,
    template_hash: String,
}

impl CachedGenerator {
    pub fn new(inner: Arc<dyn DescriptionGenerator>, slot: CacheSlot, template_hash: impl Into<String>) -> Self {
        CachedGenerator { inner, slot, template_hash: template_hash.into() }
    }

    pub fn stats(&self) -> CallStats {
        self.slot.stats()
    }
}

impl DescriptionGenerator for CachedGenerator {
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = cache_key(&format!("generator:{}", self.inner.descriptor()), &self.template_hash, request);
        self.slot.get_or_call(&key, || self.inner.complete(request))
    }
}
