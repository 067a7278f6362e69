//! Image-sequence metrics and report tables.
//!
//! Four scores per generated sequence: caption-vs-instruction similarity,
//! poem-vs-image similarity in a joint space, image-vs-emotion-prompt
//! similarity, and mean pairwise image similarity. All are cosines, so all
//! lie in [-1, 1].

mod report;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EmotionLabel;
use crate::embedding::{ImageEmbedder, JointEmbedder, TextEmbedder};
use crate::generation::ImageArtifact;
use crate::provider::{HttpJsonClient, ProviderError, RetryPolicy, Transport};
use crate::util::cosine;

pub use report::{
    aggregate_report, human_eval_fixture, render_human_eval, table2_fixture, AggregateReport, AggregateRow,
    Approach, HumanEvalRow, MetricReport, AGGREGATE_SCHEMA, REPORT_SCHEMA,
};

pub const EMOTION_PROMPT_VERSION: &str = "emotion-prompt.v1";

pub fn emotion_prompt(label: EmotionLabel) -> String {
    format!("a scene expressing {}", label.as_str())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub trait Captioner: Send + Sync {
    fn descriptor(&self) -> String;
    fn caption(&self, image: &ImageArtifact) -> Result<String, ProviderError>;
}

/// Captions with the first `max_words` words of the image's description, or
/// with the names of its dominant colours when it has none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubCaptioner {
    pub max_words: usize,
}

impl Default for StubCaptioner {
    fn default() -> Self {
        StubCaptioner { max_words: 8 }
    }
}

fn colour_name(rgb: [f64; 3]) -> &'static str {
    const NAMED: &[(&str, [f64; 3])] = &[
        ("black", [0.0, 0.0, 0.0]),
        ("white", [255.0, 255.0, 255.0]),
        ("grey", [128.0, 128.0, 128.0]),
        ("red", [200.0, 40.0, 40.0]),
        ("green", [40.0, 160.0, 60.0]),
        ("blue", [40.0, 60.0, 200.0]),
        ("yellow", [230.0, 210.0, 50.0]),
        ("orange", [230.0, 130.0, 30.0]),
        ("purple", [130.0, 50.0, 160.0]),
        ("brown", [120.0, 80.0, 40.0]),
    ];
    NAMED
        .iter()
        .min_by(|a, b| {
            let d = |c: &[f64; 3]| (0..3).map(|i| (c[i] - rgb[i]).powi(2)).sum::<f64>();
            d(&a.1).total_cmp(&d(&b.1))
        })
        .map(|n| n.0)
        .unwrap()
}

impl Captioner for StubCaptioner {
    fn descriptor(&self) -> String {
        format!("stub-caption:{}", self.max_words)
    }

    fn caption(&self, image: &ImageArtifact) -> Result<String, ProviderError> {
        let words: Vec<&str> = image.description.split_whitespace().take(self.max_words).collect();
        if !words.is_empty() {
            return Ok(words.join(" "));
        }
        let (w, h) = image.image.dimensions();
        let mut names: Vec<&str> = Vec::new();
        for (x0, x1) in [(0, w / 2), (w / 2, w)] {
            let mut sum = [0.0; 3];
            let mut n = 0.0;
            for y in 0..h {
                for x in x0..x1.max(x0 + 1).min(w) {
                    let p = image.image.get_pixel(x, y);
                    (0..3).for_each(|c| sum[c] += p[c] as f64);
                    n += 1.0;
                }
            }
            if n > 0.0 {
                let name = colour_name(sum.map(|s| s / n));
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        Ok(format!("an image in {}", names.join(" and ")))
    }
}

#[derive(Serialize)]
struct CaptionRequest {
    image_b64: String,
}

#[derive(Deserialize)]
struct CaptionResponse {
    text: String,
}

/// POST /caption {image_b64} → {text}.
pub struct HttpCaptioner {
    client: HttpJsonClient,
}

impl HttpCaptioner {
    pub fn new(endpoint: impl Into<String>, transport: Arc<dyn Transport>, retry: RetryPolicy) -> Self {
        HttpCaptioner { client: HttpJsonClient::new(endpoint, transport, retry) }
    }
}

impl Captioner for HttpCaptioner {
    fn descriptor(&self) -> String {
        format!("http:{}", self.client.base_url())
    }

    fn caption(&self, image: &ImageArtifact) -> Result<String, ProviderError> {
        let (resp, _): (CaptionResponse, _) =
            self.client.post("caption", &CaptionRequest { image_b64: image.png_base64() })?;
        Ok(resp.text)
    }
}

fn checked_cosine(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::Provider(ProviderError::InvalidResponse(format!(
            "embedding sizes {} and {} are not comparable",
            a.len(),
            b.len()
        ))));
    }
    Ok(cosine(a, b))
}

fn require_joint<E: JointEmbedder + ?Sized>(embedder: &E) -> Result<(), EvalError> {
    if embedder.joint_space() {
        Ok(())
    } else {
        Err(EvalError::Config(format!("embedder {} has no joint text/image space", TextEmbedder::descriptor(embedder))))
    }
}

/// Caption the image, then compare the caption with the instruction it was
/// generated from.
pub fn blip_alignment(
    image: &ImageArtifact,
    instruction: &str,
    captioner: &dyn Captioner,
    embedder: &dyn TextEmbedder,
) -> Result<f64, EvalError> {
    if instruction.trim().is_empty() {
        return Err(EvalError::Input("instruction is empty".into()));
    }
    let caption = captioner.caption(image)?;
    if caption.trim().is_empty() {
        return Err(EvalError::Provider(ProviderError::InvalidResponse("empty caption".into())));
    }
    checked_cosine(&embedder.embed_text(&caption)?, &embedder.embed_text(instruction)?)
}

pub fn longclip_alignment(poem_text: &str, image: &ImageArtifact, embedder: &dyn JointEmbedder) -> Result<f64, EvalError> {
    require_joint(embedder)?;
    if poem_text.trim().is_empty() {
        return Err(EvalError::Input("poem text is empty".into()));
    }
    checked_cosine(&embedder.embed_text(poem_text)?, &embedder.embed_image(image)?)
}

pub fn emotion_alignment(image: &ImageArtifact, gold: EmotionLabel, embedder: &dyn JointEmbedder) -> Result<f64, EvalError> {
    require_joint(embedder)?;
    checked_cosine(&embedder.embed_image(image)?, &embedder.embed_text(&emotion_prompt(gold))?)
}

/// Mean cosine over all unordered image pairs; `None` below two images.
pub fn character_consistency(images: &[ImageArtifact], embedder: &dyn ImageEmbedder) -> Result<Option<f64>, EvalError> {
    if images.len() < 2 {
        return Ok(None);
    }
    let vectors: Vec<Vec<f64>> = images
        .par_iter()
        .map(|im| embedder.embed_image(im))
        .collect::<Result<_, _>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            total += checked_cosine(&vectors[i], &vectors[j])?;
            pairs += 1;
        }
    }
    Ok(Some((total / pairs as f64).clamp(-1.0, 1.0)))
}

/// Everything needed to score one generated sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInputs<'a> {
    pub poem_id: &'a str,
    pub approach: Approach,
    pub model: &'a str,
    pub poem_text: &'a str,
    pub images: &'a [ImageArtifact],
    /// The prompt each image was generated from.
    pub instructions: &'a [String],
    /// Reference emotion for each image.
    pub gold_emotions: &'a [EmotionLabel],
}

/// Per-image scores are averaged into one report row for the sequence.
pub fn evaluate_sequence(
    inputs: SequenceInputs<'_>,
    captioner: &dyn Captioner,
    text_embedder: &dyn TextEmbedder,
    joint: &dyn JointEmbedder,
) -> Result<MetricReport, EvalError> {
    let n = inputs.images.len();
    if n == 0 {
        return Err(EvalError::Input("no images to evaluate".into()));
    }
    if inputs.instructions.len() != n || inputs.gold_emotions.len() != n {
        return Err(EvalError::Input(format!(
            "{n} images but {} instructions and {} emotions",
            inputs.instructions.len(),
            inputs.gold_emotions.len()
        )));
    }
    let per_image: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let im = &inputs.images[k];
            Ok((
                blip_alignment(im, &inputs.instructions[k], captioner, text_embedder)?,
                longclip_alignment(inputs.poem_text, im, joint)?,
                emotion_alignment(im, inputs.gold_emotions[k], joint)?,
            ))
        })
        .collect::<Result<_, EvalError>>()?;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| per_image.iter().map(f).sum::<f64>() / n as f64;
    Ok(MetricReport {
        schema: REPORT_SCHEMA.to_string(),
        poem_id: inputs.poem_id.to_string(),
        approach: inputs.approach,
        model: inputs.model.to_string(),
        blip_score: mean(|t| t.0),
        longclip_score: mean(|t| t.1),
        emotion_score: mean(|t| t.2),
        consistency_score: character_consistency(inputs.images, joint)?,
        image_count: n,
    })
}
