//! Record/replay of HTTP exchanges. A cassette file is a JSON array of
//! `{request_hash, response_text}` objects.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{request_hash, ProviderError, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_hash: String,
    pub response_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("cassette serializes");
        std::fs::write(path, text + "\n")
    }

    pub fn get(&self, hash: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.request_hash == hash)
            .map(|e| e.response_text.as_str())
    }

    pub fn insert(&mut self, hash: String, response_text: String) {
        self.entries.retain(|e| e.request_hash != hash);
        self.entries.push(CassetteEntry { request_hash: hash, response_text });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    /// Only answer from the cassette; a miss is an error.
    Replay,
    /// Answer from the cassette when possible, otherwise call through and
    /// append the exchange.
    Record,
}

/// Transport that serves responses from a cassette, optionally recording
/// misses from an inner live transport.
pub struct CassetteTransport {
    cassette: Mutex<Cassette>,
    inner: Option<Arc<dyn Transport>>,
    mode: CassetteMode,
    path: Option<PathBuf>,
}

impl CassetteTransport {
    pub fn replay(cassette: Cassette) -> Self {
        CassetteTransport { cassette: Mutex::new(cassette), inner: None, mode: CassetteMode::Replay, path: None }
    }

    /// Records into `path` (loaded first if it exists) using `inner` for misses.
    pub fn record(path: PathBuf, inner: Arc<dyn Transport>) -> std::io::Result<Self> {
        let cassette = if path.exists() { Cassette::load(&path)? } else { Cassette::default() };
        Ok(CassetteTransport {
            cassette: Mutex::new(cassette),
            inner: Some(inner),
            mode: CassetteMode::Record,
            path: Some(path),
        })
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock").clone()
    }
}

impl Transport for CassetteTransport {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<String, ProviderError> {
        let hash = request_hash(body);
        if let Some(text) = self.cassette.lock().expect("cassette lock").get(&hash) {
            return Ok(text.to_string());
        }
        let inner = match (self.mode, &self.inner) {
            (CassetteMode::Record, Some(inner)) => inner,
            _ => return Err(ProviderError::CassetteMiss(hash)),
        };
        let text = inner.post_json(url, body, bearer)?;
        let mut cassette = self.cassette.lock().expect("cassette lock");
        cassette.insert(hash, text.clone());
        if let Some(path) = &self.path {
            cassette
                .save(path)
                .map_err(|e| ProviderError::Config(format!("cannot write cassette {}: {e}", path.display())))?;
        }
        Ok(text)
    }
}
