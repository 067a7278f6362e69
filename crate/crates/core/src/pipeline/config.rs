use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evaluation::Approach;
use crate::generation::BackendDescriptor;
use crate::provider::RetryPolicy;
use crate::refinement::{MsprConfig, Templates};
use crate::segmentation::BoundaryPolicy;
use crate::util::{canonical_json, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaggerConfig {
    /// JSON object of surface form → label; no file means no entities.
    Gazetteer {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierConfig {
    /// JSON object of emotion → keyword list; no file means the built-in list.
    Lexicon {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Echo,
    Http { endpoint: String },
    /// Replays recorded responses; with `record = true`, misses are fetched
    /// from `endpoint` and appended to the file.
    Cassette {
        path: PathBuf,
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default)]
        record: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hash {
        #[serde(default)]
        seed: Option<u64>,
    },
    BagOfWords {
        #[serde(default)]
        seed: Option<u64>,
    },
    Http {
        endpoint: String,
        #[serde(default = "yes")]
        joint: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CaptionerConfig {
    Stub {
        #[serde(default)]
        max_words: Option<usize>,
    },
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub tagger: TaggerConfig,
    pub classifier: ClassifierConfig,
    pub generator: GeneratorConfig,
    /// Text embedder used to score refinement drafts.
    pub scorer: EmbedderConfig,
    /// Joint text/image embedder used by the metrics.
    pub embedder: EmbedderConfig,
    pub captioner: CaptionerConfig,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            tagger: TaggerConfig::Gazetteer { path: None },
            classifier: ClassifierConfig::Lexicon { path: None },
            generator: GeneratorConfig::Echo,
            scorer: EmbedderConfig::Hash { seed: None },
            embedder: EmbedderConfig::Hash { seed: None },
            captioner: CaptionerConfig::Stub { max_words: None },
            retry: RetryPolicy::default(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub stage1: PathBuf,
    pub refine: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Fraction of each earlier image's tokens used as references.
    pub rate: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { rate: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    #[serde(default = "default_approach")]
    pub approach: Approach,
    #[serde(default)]
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub providers: ProviderConfig,
    #[serde(default)]
    pub segmentation: BoundaryPolicy,
    #[serde(default)]
    pub mspr: MsprConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<TemplatePaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_overrides: Option<PathBuf>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    /// Forces the consistency flag; by default only `poemtale` uses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_directives: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_size")]
    pub image_width: u32,
    #[serde(default = "default_size")]
    pub image_height: u32,
    pub output_dir: PathBuf,
    /// Response cache; no caching when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_approach() -> Approach {
    Approach::Poemtale
}

fn default_size() -> u32 {
    64
}

fn default_workers() -> usize {
    4
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the file ends in `.json`. Relative paths are
    /// taken relative to the config file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Some(t) = &cfg.templates {
            cfg.mspr.templates = Templates::from_files(&t.stage1, &t.refine)
                .map_err(|e| PipelineError::Config(format!("templates: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus_path);
        resolve(base, &mut self.output_dir);
        if let Some(c) = &mut self.cache_dir {
            resolve(base, c);
        }
        if let Some(s) = &mut self.score_overrides {
            resolve(base, s);
        }
        if let Some(t) = &mut self.templates {
            resolve(base, &mut t.stage1);
            resolve(base, &mut t.refine);
        }
        if let TaggerConfig::Gazetteer { path: Some(p) } = &mut self.providers.tagger {
            resolve(base, p);
        }
        if let ClassifierConfig::Lexicon { path: Some(p) } = &mut self.providers.classifier {
            resolve(base, p);
        }
        if let GeneratorConfig::Cassette { path, .. } = &mut self.providers.generator {
            resolve(base, path);
        }
    }

    pub fn consistency(&self) -> bool {
        self.consistency.unwrap_or(self.approach == Approach::Poemtale)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| Err(PipelineError::Config(m));
        if self.approach == Approach::SingleImage && self.consistency == Some(true) {
            return cfg("single_image runs cannot enable consistency".into());
        }
        if !self.corpus_path.is_file() {
            return cfg(format!("corpus {} not found", self.corpus_path.display()));
        }
        let must_exist = |p: &Option<PathBuf>, what: &str| match p {
            Some(p) if !p.is_file() => Err(PipelineError::Config(format!("{what} {} not found", p.display()))),
            _ => Ok(()),
        };
        must_exist(&self.score_overrides, "score overrides")?;
        if let TaggerConfig::Gazetteer { path } = &self.providers.tagger {
            must_exist(path, "gazetteer")?;
        }
        if let ClassifierConfig::Lexicon { path } = &self.providers.classifier {
            must_exist(path, "lexicon")?;
        }
        if let GeneratorConfig::Cassette { path, endpoint, record } = &self.providers.generator {
            if *record && endpoint.is_none() {
                return cfg("recording a cassette needs an endpoint".into());
            }
            if !*record && !path.is_file() {
                return cfg(format!("cassette {} not found", path.display()));
            }
        }
        if !(0.0..=1.0).contains(&self.sampling.rate) {
            return cfg(format!("sampling rate {} outside [0, 1]", self.sampling.rate));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return cfg("image size must be positive".into());
        }
        if self.workers == 0 {
            return cfg("workers must be at least 1".into());
        }
        self.backend.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.segmentation.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.mspr.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash of everything that can change results. Output location, cache
    /// location and worker count are left out.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            for k in ["output_dir", "cache_dir", "workers"] {
                m.remove(k);
            }
        }
        sha256_hex(canonical_json(&v))
    }
}
