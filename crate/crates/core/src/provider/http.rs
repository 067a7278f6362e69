use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::{ProviderError, RetryPolicy};
use crate::util::{canonical_json, sha256_hex};

/// Environment variable consulted for a bearer token when a provider does not
/// name its own.
pub const DEFAULT_TOKEN_ENV: &str = "POEMTALE_API_TOKEN";

/// Hash identifying a request body, used by cassettes and caches.
pub fn request_hash(body: &Value) -> String {
    sha256_hex(canonical_json(body))
}

/// One POST of a JSON body, returning the raw response body of a 2xx reply.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone)]
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<String, ProviderError> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Network(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status { status: status.as_u16(), body: text });
        }
        Ok(text)
    }
}

/// JSON client bound to one base URL, with retries and optional bearer auth
/// read from the environment at call time.
#[derive(Clone)]
pub struct HttpJsonClient {
    base_url: String,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    token_env: String,
}

impl std::fmt::Debug for HttpJsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpJsonClient")
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl HttpJsonClient {
    pub fn new(base_url: impl Into<String>, transport: Arc<dyn Transport>, retry: RetryPolicy) -> Self {
        HttpJsonClient {
            base_url: base_url.into(),
            transport,
            retry,
            token_env: DEFAULT_TOKEN_ENV.to_string(),
        }
    }

    pub fn with_token_env(mut self, var: impl Into<String>) -> Self {
        self.token_env = var.into();
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn url(&self, path: &str) -> String {
        if path.is_empty() {
            return self.base_url.clone();
        }
        format!("{}/{}", self.base_url.trim_end_matches('/'), path.trim_start_matches('/'))
    }

    /// POSTs `body` to `path` and decodes the reply. Returns the decoded value
    /// and how many retries it took.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<(Resp, u32), ProviderError> {
        let body = serde_json::to_value(body).map_err(|e| ProviderError::Config(e.to_string()))?;
        let url = self.url(path);
        let token = std::env::var(&self.token_env).ok().filter(|t| !t.is_empty());
        let (text, retries) = self
            .retry
            .run(|_| self.transport.post_json(&url, &body, token.as_deref()))?;
        let decoded = serde_json::from_str(&text)
            .map_err(|e| ProviderError::InvalidResponse(format!("{url}: {e}")))?;
        Ok((decoded, retries))
    }
}
