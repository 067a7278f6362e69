//! Image backends that turn an ordered list of segment descriptions into an
//! image sequence.

mod http;
mod sequence;
mod toy;

use std::collections::BTreeMap;

use base64::Engine;
use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionError;
use crate::provider::ProviderError;

pub use http::{HttpImageBackend, ImageRequestBody, ImageResponseBody};
pub use sequence::{read_sequence, write_sequence, SequenceEntry, SequenceManifest, SEQUENCE_FILE};
pub use toy::{toy_generate, toy_token_features, ToyBackend, TOY_CHANNELS, TOY_GRID, TOY_LAYERS, TOY_TOKENS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("image is {got_w}x{got_h}, requested {want_w}x{want_h}")]
    Dimensions { want_w: u32, want_h: u32, got_w: u32, got_h: u32 },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub segment_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub poem_id: String,
    /// Ordered by segment index.
    pub prompts: Vec<PromptEntry>,
    pub consistency: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_directives: Option<String>,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.prompts.is_empty() {
            return Err(GenerationError::InvalidRequest("no prompts".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GenerationError::InvalidRequest(format!("size {}x{}", self.width, self.height)));
        }
        for (k, p) in self.prompts.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(GenerationError::InvalidRequest(format!("prompt {k} ({}) is empty", p.segment_id)));
            }
        }
        Ok(())
    }

    /// Prompt `k` with the style directives appended on a new line.
    pub fn rendered_prompt(&self, k: usize) -> String {
        let text = &self.prompts[k].text;
        match self.style_directives.as_deref().map(str::trim) {
            Some(style) if !style.is_empty() => format!("{text}\n{style}"),
            _ => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageArtifact {
    pub segment_id: String,
    pub image: RgbImage,
    /// `N × C` token features; only the toy backend produces them.
    pub feature_map: Option<Array2<f64>>,
    /// The prompt the image was generated from.
    pub description: String,
    pub backend_meta: BTreeMap<String, String>,
}

impl ImageArtifact {
    pub fn png_bytes(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.image
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }

    pub fn png_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.png_bytes())
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, GenerationError> {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| GenerationError::Decode(e.to_string()))
}

pub fn decode_png_base64(b64: &str) -> Result<RgbImage, GenerationError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| GenerationError::Decode(e.to_string()))?;
    decode_png(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Toy,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Free-form backend metadata such as sampler or quantization tags.
    #[serde(default)]
    pub options: BTreeMap<String, String>,
}

impl Default for BackendDescriptor {
    fn default() -> Self {
        BackendDescriptor { kind: BackendKind::Toy, endpoint: None, model: None, options: BTreeMap::new() }
    }
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.kind == BackendKind::Http && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(GenerationError::Config("http backend requires an endpoint".into()));
        }
        Ok(())
    }

    pub fn model_name(&self) -> String {
        match (&self.model, self.kind) {
            (Some(m), _) => m.clone(),
            (None, BackendKind::Toy) => toy::TOY_MODEL.to_string(),
            (None, BackendKind::Http) => "http".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFailure {
    pub index: usize,
    pub segment_id: String,
    pub error: GenerationError,
}

/// Artifacts for the prompts that succeeded, in order, and the first failure
/// if generation stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub artifacts: Vec<ImageArtifact>,
    pub failure: Option<SegmentFailure>,
}

impl SequenceOutcome {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

pub trait ImageBackend: Send + Sync {
    fn model_name(&self) -> String;

    /// Generates every prompt in order. Implementations stop at the first
    /// failing segment and report it in [`SequenceOutcome::failure`].
    fn generate(&self, req: &GenerationRequest) -> SequenceOutcome;
}

/// Validates the request and runs it on `backend`.
pub fn generate_sequence(req: &GenerationRequest, backend: &dyn ImageBackend) -> Result<SequenceOutcome, GenerationError> {
    req.validate()?;
    Ok(backend.generate(req))
}
