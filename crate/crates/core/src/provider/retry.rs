use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Exponential backoff with a retry cap. `max_retries = 2` means at most
/// three attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 2, initial_backoff_ms: 200, max_backoff_ms: 5_000 }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_retries: u32) -> Self {
        RetryPolicy { max_retries, initial_backoff_ms: 0, max_backoff_ms: 0 }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << retry.min(16))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent. On success returns the value together with the
    /// number of retries that were needed.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, ProviderError>,
    ) -> Result<(T, u32), ProviderError> {
        let mut retry = 0;
        loop {
            match op(retry) {
                Ok(v) => return Ok((v, retry)),
                Err(e) if e.is_retryable() && retry < self.max_retries => {
                    tracing::debug!(retry, error = %e, "retrying provider call");
                    let wait = self.backoff(retry);
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
