//! Content-addressed response cache.
//!
//! Keys are SHA-256 hashes of (provider descriptor, template hash, payload).
//! On disk each entry is `<dir>/<key[0..2]>/<key>.json` holding the value and
//! its checksum; anything that fails to parse or verify counts as a miss and
//! is overwritten by the next store.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::ProviderError;

use crate::util::{canonical_json, sha256_hex};

pub fn cache_key<P: Serialize>(provider: &str, template_hash: &str, payload: &P) -> String {
    sha256_hex(format!("{provider}\u{1f}{template_hash}\u{1f}{}", canonical_json(payload)))
}

pub trait ResponseCache: Send + Sync {
    fn lookup(&self, key: &str) -> Option<String>;
    fn store(&self, key: &str, value: &str) -> std::io::Result<()>;
}

#[derive(Debug, Serialize, Deserialize)]
struct DiskEntry {
    key: String,
    sha256: String,
    value: String,
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DiskCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("__");
        self.dir.join(shard).join(format!("{key}.json"))
    }
}

impl ResponseCache for DiskCache {
    fn lookup(&self, key: &str) -> Option<String> {
        let text = std::fs::read_to_string(self.entry_path(key)).ok()?;
        let entry: DiskEntry = serde_json::from_str(&text).ok()?;
        if entry.key != key || entry.sha256 != sha256_hex(&entry.value) {
            tracing::warn!(key, "corrupt cache entry treated as miss");
            return None;
        }
        Some(entry.value)
    }

    fn store(&self, key: &str, value: &str) -> std::io::Result<()> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry has a shard directory");
        std::fs::create_dir_all(parent)?;
        let entry = DiskEntry { key: key.to_string(), sha256: sha256_hex(value), value: value.to_string() };
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(serde_json::to_string(&entry).expect("entry serializes").as_bytes())?;
            f.sync_all()?;
        }
        // Last writer wins on identical keys.
        std::fs::rename(&tmp, &path)
    }
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    map: Mutex<HashMap<String, String>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseCache for MemoryCache {
    fn lookup(&self, key: &str) -> Option<String> {
        self.map.lock().expect("cache lock").get(key).cloned()
    }

    fn store(&self, key: &str, value: &str) -> std::io::Result<()> {
        self.map.lock().expect("cache lock").insert(key.to_string(), value.to_string());
        Ok(())
    }
}

/// Live-call and cache-hit counters shared by the caching wrappers.
#[derive(Debug, Default)]
pub struct CallCounter {
    live: AtomicUsize,
    hits: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub live_calls: usize,
    pub cache_hits: usize,
}

impl CallCounter {
    pub fn record_live(&self) {
        self.live.fetch_add(1, Ordering::SeqCst);
    }

    pub fn record_hit(&self) {
        self.hits.fetch_add(1, Ordering::SeqCst);
    }

    pub fn stats(&self) -> CallStats {
        CallStats { live_calls: self.live.load(Ordering::SeqCst), cache_hits: self.hits.load(Ordering::SeqCst) }
    }
}

/// Cache plus counter shared by one provider wrapper.
#[derive(Clone)]
pub struct CacheSlot {
    cache: Option<Arc<dyn ResponseCache>>,
    counter: Arc<CallCounter>,
}

impl CacheSlot {
    pub fn new(cache: Option<Arc<dyn ResponseCache>>) -> Self {
        CacheSlot { cache, counter: Arc::new(CallCounter::default()) }
    }

    pub fn stats(&self) -> CallStats {
        self.counter.stats()
    }

    /// Returns the cached value for `key` or computes, stores and returns it.
    /// Entries that fail to decode count as misses.
    pub fn get_or_call<T: Serialize + DeserializeOwned>(
        &self,
        key: &str,
        call: impl FnOnce() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        if let Some(cache) = &self.cache {
            if let Some(v) = cache.lookup(key).and_then(|text| serde_json::from_str(&text).ok()) {
                self.counter.record_hit();
                return Ok(v);
            }
        }
        self.counter.record_live();
        let value = call()?;
        if let Some(cache) = &self.cache {
            let text = serde_json::to_string(&value).expect("cached values serialize");
            if let Err(e) = cache.store(key, &text) {
                tracing::warn!(error = %e, "could not write cache entry");
            }
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let key = cache_key("stub", "t", &"payload");
        assert_eq!(cache.lookup(&key), None);
        cache.store(&key, "value").unwrap();
        assert_eq!(cache.lookup(&key).as_deref(), Some("value"));
    }

    #[test]
    fn truncated_entry_is_a_miss_and_gets_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let key = cache_key("stub", "t", &1);
        cache.store(&key, "long enough value").unwrap();
        let path = cache.entry_path(&key);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert_eq!(cache.lookup(&key), None);
        cache.store(&key, "fresh").unwrap();
        assert_eq!(cache.lookup(&key).as_deref(), Some("fresh"));
    }

    #[test]
    fn tampered_value_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let key = cache_key("stub", "t", &2);
        cache.store(&key, "abc").unwrap();
        let path = cache.entry_path(&key);
        let text = std::fs::read_to_string(&path).unwrap().replace("\"abc\"", "\"abd\"");
        std::fs::write(&path, text).unwrap();
        assert_eq!(cache.lookup(&key), None);
    }

    #[test]
    fn key_depends_on_every_part() {
        let base = cache_key("a", "t", &"p");
        assert_ne!(base, cache_key("b", "t", &"p"));
        assert_ne!(base, cache_key("a", "u", &"p"));
        assert_ne!(base, cache_key("a", "t", &"q"));
    }

    #[test]
    fn concurrent_stores_leave_a_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let key = cache_key("stub", "t", &"race");
        std::thread::scope(|s| {
            for i in 0..8 {
                let cache = &cache;
                let key = &key;
                s.spawn(move || cache.store(key, &format!("v{i}")).unwrap());
            }
        });
        assert!(cache.lookup(&key).unwrap().starts_with('v'));
    }

    #[test]
    fn slot_counts_hits_and_misses() {
        let slot = CacheSlot::new(Some(Arc::new(MemoryCache::new())));
        let v: u32 = slot.get_or_call("k", || Ok(7)).unwrap();
        let w: u32 = slot.get_or_call("k", || panic!("should hit")).unwrap();
        assert_eq!((v, w), (7, 7));
        assert_eq!(slot.stats(), CallStats { live_calls: 1, cache_hits: 1 });
    }

    #[test]
    fn undecodable_entry_is_a_miss() {
        let cache = Arc::new(MemoryCache::new());
        cache.store("k", "not json").unwrap();
        let slot = CacheSlot::new(Some(cache));
        let v: u32 = slot.get_or_call("k", || Ok(3)).unwrap();
        assert_eq!(v, 3);
        assert_eq!(slot.stats().live_calls, 1);
    }

    #[test]
    fn without_cache_every_call_is_live() {
        let slot = CacheSlot::new(None);
        for _ in 0..3 {
            let _: u32 = slot.get_or_call("k", || Ok(1)).unwrap();
        }
        assert_eq!(slot.stats().live_calls, 3);
    }
}
