//! Builds the configured providers and wraps each in a response cache with
//! live-call counting.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;


use super::config::{CaptionerConfig, ClassifierConfig, EmbedderConfig, GeneratorConfig, RunConfig, TaggerConfig};
use super::PipelineError;
use crate::embedding::{BagOfWordsEmbedder, HashEmbedder, HttpEmbedder, ImageEmbedder, JointEmbedder, TextEmbedder};
use crate::evaluation::{Captioner, HttpCaptioner, StubCaptioner};
use crate::generation::{BackendKind, HttpImageBackend, ImageArtifact, ImageBackend, ToyBackend};
use crate::provider::{
    cache_key, CacheSlot, CallStats, Cassette, CassetteTransport, DiskCache, ProviderError, ReqwestTransport,
    ResponseCache, Transport,
};
use crate::refinement::{CachedGenerator, DescriptionGenerator, EchoGenerator, HttpGenerator, ScoreOverrides};
use crate::segmentation::{
    EmotionClassifier, EmotionScore, Entity, EntityTagger, GazetteerTagger, HttpAnnotator, LexiconClassifier,
};
use crate::util::sha256_hex;

struct CachedTagger {
    inner: Arc<dyn EntityTagger>,
    slot: CacheSlot,
}

impl EntityTagger for CachedTagger {
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
    fn tag(&self, line: &str) -> Result<Vec<Entity>, ProviderError> {
        let key = cache_key(&format!("tagger:{}", self.inner.descriptor()), "", &line);
        self.slot.get_or_call(&key, || self.inner.tag(line))
    }
}

struct CachedClassifier {
    inner: Arc<dyn EmotionClassifier>,
    slot: CacheSlot,
}

impl EmotionClassifier for CachedClassifier {
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
    fn classify(&self, line: &str) -> Result<EmotionScore, ProviderError> {
        let key = cache_key(&format!("classifier:{}", self.inner.descriptor()), "", &line);
        self.slot.get_or_call(&key, || self.inner.classify(line))
    }
}

/// Joint embedder with cached text and image lookups. Images are keyed by
/// PNG bytes plus description.
struct CachedEmbedder {
    inner: Arc<dyn JointEmbedder>,
    slot: CacheSlot,
}

impl TextEmbedder for CachedEmbedder {
    fn descriptor(&self) -> String {
        TextEmbedder::descriptor(&*self.inner)
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let key = cache_key(&format!("embed_text:{}", TextEmbedder::descriptor(&*self.inner)), "", &text);
        self.slot.get_or_call(&key, || self.inner.embed_text(text))
    }
}

fn image_payload(image: &ImageArtifact) -> (String, String) {
    (sha256_hex(image.png_bytes()), image.description.clone())
}

impl ImageEmbedder for CachedEmbedder {
    fn descriptor(&self) -> String {
        ImageEmbedder::descriptor(&*self.inner)
    }
    fn embed_image(&self, image: &ImageArtifact) -> Result<Vec<f64>, ProviderError> {
        let key = cache_key(&format!("embed_image:{}", ImageEmbedder::descriptor(&*self.inner)), "", &image_payload(image));
        self.slot.get_or_call(&key, || self.inner.embed_image(image))
    }
}

impl JointEmbedder for CachedEmbedder {
    fn joint_space(&self) -> bool {
        self.inner.joint_space()
    }
}

struct CachedCaptioner {
    inner: Arc<dyn Captioner>,
    slot: CacheSlot,
}

impl Captioner for CachedCaptioner {
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
    fn caption(&self, image: &ImageArtifact) -> Result<String, ProviderError> {
        let key = cache_key(&format!("caption:{}", self.inner.descriptor()), "", &image_payload(image));
        self.slot.get_or_call(&key, || self.inner.caption(image))
    }
}

/// Live calls and cache hits per provider role.
pub type ProviderStats = BTreeMap<String, CallStats>;

/// Every provider a run needs, already wrapped for caching.
pub struct Providers {
    pub tagger: Arc<dyn EntityTagger>,
    pub classifier: Arc<dyn EmotionClassifier>,
    pub generator: Arc<dyn DescriptionGenerator>,
    pub scorer: Arc<dyn JointEmbedder>,
    pub embedder: Arc<dyn JointEmbedder>,
    pub captioner: Arc<dyn Captioner>,
    pub backend: Arc<dyn ImageBackend>,
    pub overrides: Option<ScoreOverrides>,
    slots: Vec<(&'static str, CacheSlot)>,
}

impl Providers {
    pub fn stats(&self) -> ProviderStats {
        self.slots.iter().map(|(name, s)| (name.to_string(), s.stats())).collect()
    }

    pub fn live_calls(&self) -> usize {
        self.slots.iter().map(|(_, s)| s.stats().live_calls).sum()
    }

    /// Builds from a validated config, using `transport` for every HTTP
    /// provider (a real client when `None`).
    pub fn from_config(cfg: &RunConfig, transport: Option<Arc<dyn Transport>>) -> Result<Self, PipelineError> {
        let conf = |e: ProviderError| PipelineError::Config(e.to_string());
        let transport: Arc<dyn Transport> = match transport {
            Some(t) => t,
            None => Arc::new(ReqwestTransport::new(Duration::from_secs(cfg.providers.timeout_secs)).map_err(conf)?),
        };
        let cache: Option<Arc<dyn ResponseCache>> = match &cfg.cache_dir {
            Some(dir) => Some(Arc::new(
                DiskCache::new(dir).map_err(|e| PipelineError::Config(format!("cache {}: {e}", dir.display())))?,
            )),
            None => None,
        };
        let retry = cfg.providers.retry;
        let slot = || CacheSlot::new(cache.clone());

        let mut shared_annotator: Option<Arc<HttpAnnotator>> = None;
        let mut annotator = |endpoint: &str| {
            shared_annotator
                .get_or_insert_with(|| Arc::new(HttpAnnotator::new(endpoint, transport.clone())))
                .clone()
        };
        let tagger: Arc<dyn EntityTagger> = match &cfg.providers.tagger {
            TaggerConfig::Gazetteer { path: None } => Arc::new(GazetteerTagger::default()),
            TaggerConfig::Gazetteer { path: Some(p) } => Arc::new(GazetteerTagger::from_json_file(p).map_err(conf)?),
            TaggerConfig::Http { endpoint } => annotator(endpoint),
        };
        let classifier: Arc<dyn EmotionClassifier> = match &cfg.providers.classifier {
            ClassifierConfig::Lexicon { path: None } => Arc::new(LexiconClassifier::builtin()),
            ClassifierConfig::Lexicon { path: Some(p) } => Arc::new(LexiconClassifier::from_json_file(p).map_err(conf)?),
            ClassifierConfig::Http { endpoint } => annotator(endpoint),
        };
        let generator: Arc<dyn DescriptionGenerator> = match &cfg.providers.generator {
            GeneratorConfig::Echo => Arc::new(EchoGenerator),
            GeneratorConfig::Http { endpoint } => Arc::new(HttpGenerator::new(endpoint, transport.clone())),
            GeneratorConfig::Cassette { path, endpoint, record } => {
                let t: Arc<dyn Transport> = if *record {
                    Arc::new(CassetteTransport::record(path.clone(), transport.clone()).map_err(|e| {
                        PipelineError::Config(format!("cassette {}: {e}", path.display()))
                    })?)
                } else {
                    let c = Cassette::load(path)
                        .map_err(|e| PipelineError::Config(format!("cassette {}: {e}", path.display())))?;
                    Arc::new(CassetteTransport::replay(c))
                };
                Arc::new(HttpGenerator::new(endpoint.clone().unwrap_or_else(|| "cassette://replay".into()), t))
            }
        };
        let embedder_for = |c: &EmbedderConfig| -> Arc<dyn JointEmbedder> {
            match c {
                EmbedderConfig::Hash { seed } => Arc::new(seed.map(HashEmbedder::new).unwrap_or_default()),
                EmbedderConfig::BagOfWords { seed } => Arc::new(BagOfWordsEmbedder { seed: seed.unwrap_or(0) }),
                EmbedderConfig::Http { endpoint, joint } => {
                    Arc::new(HttpEmbedder::new(endpoint.clone(), transport.clone(), retry, *joint))
                }
            }
        };
        let captioner: Arc<dyn Captioner> = match &cfg.providers.captioner {
            CaptionerConfig::Stub { max_words } => {
                Arc::new(max_words.map(|m| StubCaptioner { max_words: m }).unwrap_or_default())
            }
            CaptionerConfig::Http { endpoint } => Arc::new(HttpCaptioner::new(endpoint.clone(), transport.clone(), retry)),
        };
        let backend: Arc<dyn ImageBackend> = match cfg.backend.kind {
            BackendKind::Toy => Arc::new(ToyBackend { sampling_rate: cfg.sampling.rate }),
            BackendKind::Http => Arc::new(
                HttpImageBackend::new(cfg.backend.clone(), transport.clone(), retry)
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
            ),
        };
        let overrides = match &cfg.score_overrides {
            Some(p) => Some(ScoreOverrides::from_json_file(p).map_err(|e| PipelineError::Config(e.to_string()))?),
            None => None,
        };

        let slots = [("tagger", slot()), ("classifier", slot()), ("generator", slot()), ("scorer", slot()), ("embedder", slot()), ("captioner", slot())];
        let s = |i: usize| slots[i].1.clone();
        Ok(Providers {
            tagger: Arc::new(CachedTagger { inner: tagger, slot: s(0) }),
            classifier: Arc::new(CachedClassifier { inner: classifier, slot: s(1) }),
            generator: Arc::new(CachedGenerator::new(generator, s(2), cfg.mspr.templates.hash())),
            scorer: Arc::new(CachedEmbedder { inner: embedder_for(&cfg.providers.scorer), slot: s(3) }),
            embedder: Arc::new(CachedEmbedder { inner: embedder_for(&cfg.providers.embedder), slot: s(4) }),
            captioner: Arc::new(CachedCaptioner { inner: captioner, slot: s(5) }),
            backend,
            overrides,
            slots: slots.into_iter().collect(),
        })
    }
}
