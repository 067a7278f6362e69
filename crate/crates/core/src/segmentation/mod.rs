//! Entity-plus-emotion segmentation.
//!
//! Every line gets a set of named entities and an emotion label. A new
//! segment starts at line `i` when the emotion differs from line `i - 1` or
//! the entity-shift rule fires between them; boundaries that would leave a
//! segment shorter than `min_segment_lines` are then suppressed left to
//! right, merging the short piece into its left neighbour.

mod boundaries;
mod providers;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmotionLabel, Poem};
use crate::provider::{ProviderError, RetryPolicy};

pub use boundaries::{
    boundary_agreement, candidate_boundaries, detect_boundaries, dominant_emotion, gold_boundaries, is_shift,
    segment_poem, segments_from_boundaries, segments_from_gold, BoundaryAgreement,
};
pub use providers::{
    builtin_emotion_lexicon, AnnotateRequest, AnnotateResponse, GazetteerTagger, HttpAnnotator, LexiconClassifier,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityLabel {
    Person,
    Location,
    Organization,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub label: EntityLabel,
}

impl Entity {
    pub fn new(surface: impl Into<String>, label: EntityLabel) -> Self {
        Entity { surface: surface.into(), label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionScore {
    pub label: EmotionLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineAnnotation {
    pub line_index: usize,
    pub entities: BTreeSet<Entity>,
    pub emotion: EmotionLabel,
    pub emotion_confidence: f64,
}

impl LineAnnotation {
    pub fn categories(&self) -> BTreeSet<EntityLabel> {
        self.entities.iter().map(|e| e.label).collect()
    }
}

pub trait EntityTagger: Send + Sync {
    fn descriptor(&self) -> String;
    fn tag(&self, line: &str) -> Result<Vec<Entity>, ProviderError>;
}

pub trait EmotionClassifier: Send + Sync {
    fn descriptor(&self) -> String;
    fn classify(&self, line: &str) -> Result<EmotionScore, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityShiftRule {
    /// The sets of entity categories differ (two entity-free lines never do).
    SetInequality,
    /// The line mentions a surface form absent from the previous line.
    NewEntityIntroduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmotionShiftRule {
    LabelChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryPolicy {
    pub entity_shift_rule: EntityShiftRule,
    pub emotion_shift_rule: EmotionShiftRule,
    pub min_segment_lines: usize,
    /// Emotions classified below this confidence become `neutral`.
    pub confidence_floor: f64,
}

impl Default for BoundaryPolicy {
    fn default() -> Self {
        BoundaryPolicy {
            entity_shift_rule: EntityShiftRule::SetInequality,
            emotion_shift_rule: EmotionShiftRule::LabelChange,
            min_segment_lines: 2,
            confidence_floor: 0.0,
        }
    }
}

impl BoundaryPolicy {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if self.min_segment_lines < 1 {
            return Err(SegmentationError::Policy("min_segment_lines must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(SegmentationError::Policy(format!(
                "confidence_floor {} is outside [0, 1]",
                self.confidence_floor
            )));
        }
        Ok(())
    }
}

/// Contiguous run of lines `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub poem_id: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub dominant_emotion: EmotionLabel,
    pub entities: BTreeSet<Entity>,
}

impl Segment {
    pub fn id(&self) -> String {
        format!("{}#{}", self.poem_id, self.index)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn text(&self, poem: &Poem) -> String {
        poem.lines_text(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentationError {
    #[error("annotating line {line_index} failed after {attempts} attempt(s): {source}")]
    Provider {
        line_index: usize,
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("invalid boundary policy: {0}")]
    Policy(String),
    #[error("annotations do not match the poem: {0}")]
    Annotations(String),
}

/// One annotation per line, in order. Lines are annotated in parallel and
/// reassembled by index; each provider call is retried per `retry`.
pub fn annotate_lines(
    poem: &Poem,
    tagger: &dyn EntityTagger,
    classifier: &dyn EmotionClassifier,
    policy: &BoundaryPolicy,
    retry: &RetryPolicy,
) -> Result<Vec<LineAnnotation>, SegmentationError> {
    policy.validate()?;
    if poem.lines.is_empty() {
        return Err(SegmentationError::Annotations("poem has no lines".into()));
    }
    poem.lines
        .par_iter()
        .enumerate()
        .map(|(line_index, line)| {
            let fail = |source: ProviderError| SegmentationError::Provider {
                line_index,
                attempts: retry.max_retries + 1,
                source,
            };
            let (entities, _) = retry.run(|_| tagger.tag(line)).map_err(fail)?;
            let (score, _) = retry.run(|_| classifier.classify(line)).map_err(fail)?;
            let (emotion, emotion_confidence) = if score.confidence < policy.confidence_floor {
                (EmotionLabel::Neutral, score.confidence)
            } else {
                (score.label, score.confidence)
            };
            Ok(LineAnnotation {
                line_index,
                entities: entities.into_iter().collect(),
                emotion,
                emotion_confidence: emotion_confidence.clamp(0.0, 1.0),
            })
        })
        .collect()
}
