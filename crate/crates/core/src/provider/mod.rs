//! Plumbing shared by every remote provider: a retrying JSON-over-HTTP
//! client, record/replay cassettes and a content-addressed response cache.

mod cache;
mod cassette;
mod http;
mod retry;

pub use cache::{cache_key, CacheSlot, CallCounter, CallStats, DiskCache, MemoryCache, ResponseCache};
pub use cassette::{Cassette, CassetteEntry, CassetteMode, CassetteTransport};
pub use http::{request_hash, HttpJsonClient, ReqwestTransport, Transport, DEFAULT_TOKEN_ENV};
pub use retry::RetryPolicy;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("network error: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("no cassette entry for request {0}")]
    CassetteMiss(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("provider failed: {0}")]
    Failed(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Network(_) | ProviderError::Timeout | ProviderError::Failed(_) => true,
            ProviderError::Status { status, .. } => matches!(status, 408 | 429 | 500..=599),
            ProviderError::InvalidResponse(_)
            | ProviderError::CassetteMiss(_)
            | ProviderError::Config(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retryable_classification() {
        assert!(ProviderError::Timeout.is_retryable());
        assert!(ProviderError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(ProviderError::Status { status: 429, body: String::new() }.is_retryable());
        assert!(!ProviderError::Status { status: 404, body: String::new() }.is_retryable());
        assert!(!ProviderError::InvalidResponse("x".into()).is_retryable());
    }
}
