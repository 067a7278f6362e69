//! Multi-stage description refinement.
//!
//! Stage 1 asks a text generator for a scene description of one segment;
//! every later stage feeds the previous description back for revision. Each
//! draft is scored by text-text cosine against a reference (the segment by
//! default, or the whole poem), and the loop stops once the score plateaus
//! or the iteration cap is reached.

mod generator;
mod plateau;
mod templates;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::TextEmbedder;
use crate::provider::{ProviderError, RetryPolicy};
use crate::util::cosine;

pub use generator::{
    CachedGenerator, ChatMessage, ChatRequest, ChatResponse, DescriptionGenerator, EchoGenerator, HttpGenerator,
};
pub use plateau::{argmax_earliest, plateau_reached, termination_stage, PlateauMode, Termination};
pub use templates::{render, Templates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDraft {
    pub segment_id: String,
    pub stage: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub segment_id: String,
    pub drafts: Vec<PromptDraft>,
    /// Index into `drafts`; absent only when stage 1 itself failed.
    pub best: Option<usize>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RefinementTrace {
    pub fn best_draft(&self) -> Option<&PromptDraft> {
        self.best.and_then(|i| self.drafts.get(i))
    }

    pub fn scores(&self) -> Vec<f64> {
        self.drafts.iter().filter_map(|d| d.score).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreReference {
    Segment,
    Poem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsprConfig {
    pub plateau_epsilon: f64,
    pub plateau_window: usize,
    pub max_iterations: usize,
    pub plateau_mode: PlateauMode,
    pub reference: ScoreReference,
    pub model: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub retry: RetryPolicy,
    pub templates: Templates,
}

impl Default for MsprConfig {
    fn default() -> Self {
        MsprConfig {
            plateau_epsilon: 0.005,
            plateau_window: 3,
            max_iterations: 8,
            plateau_mode: PlateauMode::BestSoFar,
            reference: ScoreReference::Segment,
            model: "stub".into(),
            temperature: 0.0,
            seed: None,
            retry: RetryPolicy::default(),
            templates: Templates::default(),
        }
    }
}

impl MsprConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.plateau_epsilon.is_finite() && self.plateau_epsilon >= 0.0) {
            return Err(RefineError::Config(format!("plateau_epsilon {} must be finite and >= 0", self.plateau_epsilon)));
        }
        if self.plateau_window < 1 {
            return Err(RefineError::Config("plateau_window must be at least 1".into()));
        }
        if self.max_iterations < self.plateau_window + 1 {
            return Err(RefineError::Config(format!(
                "max_iterations {} must be at least plateau_window + 1 = {}",
                self.max_iterations,
                self.plateau_window + 1
            )));
        }
        self.templates.validate().map_err(RefineError::Config)
    }

    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.temperature,
            seed: self.seed,
        }
    }
}

/// Human-supplied scores keyed by (segment id, stage). When present they
/// replace the embedder's score for that draft.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreOverrides {
    scores: HashMap<(String, usize), f64>,
}

#[derive(Debug, Deserialize)]
struct OverrideRow {
    segment_id: String,
    stage: usize,
    score: f64,
}

impl ScoreOverrides {
    pub fn insert(&mut self, segment_id: impl Into<String>, stage: usize, score: f64) {
        self.scores.insert((segment_id.into(), stage), score);
    }

    pub fn get(&self, segment_id: &str, stage: usize) -> Option<f64> {
        self.scores.get(&(segment_id.to_string(), stage)).copied()
    }

    /// Reads a JSON array of `{segment_id, stage, score}`.
    pub fn from_json_file(path: &Path) -> Result<Self, RefineError> {
        let text = std::fs::read_to_string(path).map_err(|e| RefineError::Config(format!("{}: {e}", path.display())))?;
        let rows: Vec<OverrideRow> =
            serde_json::from_str(&text).map_err(|e| RefineError::Config(format!("{}: {e}", path.display())))?;
        let mut out = ScoreOverrides::default();
        for r in rows {
            if !(-1.0..=1.0).contains(&r.score) {
                return Err(RefineError::Config(format!("override score {} outside [-1, 1]", r.score)));
            }
            out.insert(r.segment_id, r.stage, r.score);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("segment text is empty")]
    EmptySegment,
    #[error("text to score is empty")]
    EmptyText,
    #[error("generator failed at stage {stage}: {source}")]
    Generator {
        stage: usize,
        #[source]
        source: ProviderError,
    },
    #[error("scorer failed: {0}")]
    Scorer(#[source] ProviderError),
    #[error("invalid refinement config: {0}")]
    Config(String),
}

/// The texts one refinement trace works from.
#[derive(Debug, Clone, Copy)]
pub struct MsprInput<'a> {
    pub segment_id: &'a str,
    pub segment_text: &'a str,
    pub poem_text: &'a str,
}

fn generate(stage: usize, prompt: String, generator: &dyn DescriptionGenerator, cfg: &MsprConfig) -> Result<String, RefineError> {
    let request = cfg.request(prompt);
    cfg.retry
        .run(|_| {
            let text = generator.complete(&request)?;
            let text = text.trim().to_string();
            if text.is_empty() {
                Err(ProviderError::Failed("empty completion".into()))
            } else {
                Ok(text)
            }
        })
        .map(|(t, _)| t)
        .map_err(|source| RefineError::Generator { stage, source })
}

pub fn initial_description(
    input: MsprInput<'_>,
    generator: &dyn DescriptionGenerator,
    cfg: &MsprConfig,
) -> Result<PromptDraft, RefineError> {
    if input.segment_text.trim().is_empty() {
        return Err(RefineError::EmptySegment);
    }
    let prompt = cfg.templates.render_stage1(input.poem_text, input.segment_text);
    let text = generate(1, prompt, generator, cfg)?;
    Ok(PromptDraft { segment_id: input.segment_id.to_string(), stage: 1, text, score: None })
}

pub fn refine_description(
    input: MsprInput<'_>,
    previous: &PromptDraft,
    generator: &dyn DescriptionGenerator,
    cfg: &MsprConfig,
) -> Result<PromptDraft, RefineError> {
    let stage = previous.stage + 1;
    let prompt = cfg.templates.render_refine(input.poem_text, input.segment_text, &previous.text);
    let text = generate(stage, prompt, generator, cfg)?;
    Ok(PromptDraft { segment_id: previous.segment_id.clone(), stage, text, score: None })
}

/// Cosine between the embeddings of the two texts.
pub fn score_alignment(reference: &str, description: &str, scorer: &dyn TextEmbedder) -> Result<f64, RefineError> {
    if reference.trim().is_empty() || description.trim().is_empty() {
        return Err(RefineError::EmptyText);
    }
    let a = scorer.embed_text(reference).map_err(RefineError::Scorer)?;
    let b = scorer.embed_text(description).map_err(RefineError::Scorer)?;
    if a.len() != b.len() {
        return Err(RefineError::Scorer(ProviderError::InvalidResponse(format!(
            "embedding sizes differ: {} vs {}",
            a.len(),
            b.len()
        ))));
    }
    Ok(cosine(&a, &b))
}

/// Runs the loop for one segment. A generator failure ends the trace early
/// with whatever drafts were produced; scorer failures are returned as errors.
pub fn run_mspr(
    input: MsprInput<'_>,
    generator: &dyn DescriptionGenerator,
    scorer: &dyn TextEmbedder,
    cfg: &MsprConfig,
    overrides: Option<&ScoreOverrides>,
) -> Result<RefinementTrace, RefineError> {
    cfg.validate()?;
    if input.segment_text.trim().is_empty() {
        return Err(RefineError::EmptySegment);
    }
    let reference = match cfg.reference {
        ScoreReference::Segment => input.segment_text,
        ScoreReference::Poem => input.poem_text,
    };
    let mut drafts: Vec<PromptDraft> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let finish = |drafts: Vec<PromptDraft>, scores: &[f64], termination, error: Option<String>| RefinementTrace {
        segment_id: input.segment_id.to_string(),
        drafts,
        best: argmax_earliest(scores),
        termination,
        error,
    };

    loop {
        let next = match drafts.last() {
            None => initial_description(input, generator, cfg),
            Some(prev) => refine_description(input, prev, generator, cfg),
        };
        let mut draft = match next {
            Ok(d) => d,
            Err(e @ RefineError::Generator { .. }) => {
                tracing::warn!(segment = input.segment_id, error = %e, "description generator failed");
                return Ok(finish(drafts, &scores, Termination::GeneratorFailure, Some(e.to_string())));
            }
            Err(e) => return Err(e),
        };
        let score = match overrides.and_then(|o| o.get(input.segment_id, draft.stage)) {
            Some(s) => s,
            None => score_alignment(reference, &draft.text, scorer)?,
        };
        draft.score = Some(score);
        drafts.push(draft);
        scores.push(score);

        if plateau_reached(&scores, cfg.plateau_window, cfg.plateau_epsilon, cfg.plateau_mode) {
            return Ok(finish(drafts, &scores, Termination::Plateau, None));
        }
        if drafts.len() >= cfg.max_iterations {
            return Ok(finish(drafts, &scores, Termination::MaxIterations, None));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{BagOfWordsEmbedder, HashEmbedder};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn input<'a>(seg: &'a str, poem: &'a str) -> MsprInput<'a> {
        MsprInput { segment_id: "p#0", segment_text: seg, poem_text: poem }
    }

    fn fast() -> MsprConfig {
        MsprConfig { retry: RetryPolicy::no_backoff(1), ..Default::default() }
    }

    struct Bang;
    impl DescriptionGenerator for Bang {
        fn descriptor(&self) -> String {
            "bang".into()
        }
        fn complete(&self, r: &ChatRequest) -> Result<String, ProviderError> {
            EchoGenerator.complete(r).map(|t| t + "!")
        }
    }

    /// Scores drafts from a fixed list, by stage.
    struct Scripted(Vec<f64>);
    impl Scripted {
        fn overrides(&self) -> ScoreOverrides {
            let mut o = ScoreOverrides::default();
            for (i, s) in self.0.iter().enumerate() {
                o.insert("p#0", i + 1, *s);
            }
            o
        }
    }

    #[test]
    fn echo_stage_one_is_last_segment_line() {
        let d = initial_description(input("the first line\nthe second line", "poem"), &EchoGenerator, &fast()).unwrap();
        assert_eq!((d.stage, d.text.as_str()), (1, "the second line"));
    }

    #[test]
    fn empty_segment_is_rejected() {
        assert_eq!(initial_description(input("  ", "poem"), &EchoGenerator, &fast()), Err(RefineError::EmptySegment));
    }

    #[test]
    fn refine_appends_and_increments() {
        let prev = PromptDraft { segment_id: "p#0".into(), stage: 3, text: "a calm sea".into(), score: Some(0.1) };
        let d = refine_description(input("seg", "poem"), &prev, &Bang, &fast()).unwrap();
        assert_eq!((d.stage, d.text.as_str()), (4, "a calm sea!"));
    }

    struct Capture(Mutex<Vec<String>>);
    impl DescriptionGenerator for Capture {
        fn descriptor(&self) -> String {
            "capture".into()
        }
        fn complete(&self, r: &ChatRequest) -> Result<String, ProviderError> {
            self.0.lock().unwrap().push(r.messages[0].content.clone());
            Ok("draft".into())
        }
    }

    #[test]
    fn prompts_carry_inputs() {
        let g = Capture(Mutex::new(vec![]));
        let first = initial_description(input("SEGMENT TEXT", "POEM TEXT"), &g, &fast()).unwrap();
        refine_description(input("SEGMENT TEXT", "POEM TEXT"), &first, &g, &fast()).unwrap();
        let prompts = g.0.lock().unwrap();
        assert!(prompts[0].contains("SEGMENT TEXT") && prompts[0].contains("visual storytelling expert"));
        assert!(prompts[1].contains("POEM TEXT") && prompts[1].contains("draft"));
    }

    #[test]
    fn score_identity_and_order_invariance() {
        let h = HashEmbedder::default();
        assert!((score_alignment("a pale moon", "a pale moon", &h).unwrap() - 1.0).abs() < 1e-6);
        let b = BagOfWordsEmbedder::default();
        assert!((score_alignment("moon over the sea", "sea the over moon", &b).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(score_alignment("", "x", &h), Err(RefineError::EmptyText));
    }

    #[test]
    fn plateau_trace_matches_score_rule() {
        let s = Scripted(vec![0.5, 0.6, 0.61, 0.612, 0.613, 0.9, 0.9, 0.9]);
        let t = run_mspr(input("seg", "poem"), &Bang, &HashEmbedder::default(), &fast(), Some(&s.overrides())).unwrap();
        assert_eq!(t.termination, Termination::Plateau);
        assert_eq!(t.drafts.len(), 5);
        assert_eq!(t.best, Some(4));
        assert_eq!(t.drafts.iter().map(|d| d.stage).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn climbing_scores_run_to_cap() {
        let s = Scripted((0..8).map(|i| -0.7 + 0.1 * i as f64).collect());
        let t = run_mspr(input("seg", "poem"), &Bang, &HashEmbedder::default(), &fast(), Some(&s.overrides())).unwrap();
        assert_eq!((t.termination, t.drafts.len(), t.best), (Termination::MaxIterations, 8, Some(7)));
    }

    struct FailAt(usize, AtomicUsize);
    impl DescriptionGenerator for FailAt {
        fn descriptor(&self) -> String {
            "fail".into()
        }
        fn complete(&self, r: &ChatRequest) -> Result<String, ProviderError> {
            if self.1.fetch_add(1, Ordering::SeqCst) >= self.0 {
                Err(ProviderError::Timeout)
            } else {
                EchoGenerator.complete(r)
            }
        }
    }

    #[test]
    fn generator_failure_keeps_partial_trace() {
        let g = FailAt(2, AtomicUsize::new(0));
        let t = run_mspr(input("seg", "poem"), &g, &HashEmbedder::default(), &fast(), None).unwrap();
        assert_eq!((t.termination, t.drafts.len()), (Termination::GeneratorFailure, 2));
        assert!(t.error.is_some());
        let g = FailAt(0, AtomicUsize::new(0));
        let t = run_mspr(input("seg", "poem"), &g, &HashEmbedder::default(), &fast(), None).unwrap();
        assert_eq!((t.drafts.len(), t.best), (0, None));
        // one attempt plus one retry
        assert_eq!(g.1.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn config_bounds() {
        assert!(MsprConfig { max_iterations: 3, ..Default::default() }.validate().is_err());
        assert!(MsprConfig { plateau_epsilon: -1.0, ..Default::default() }.validate().is_err());
        MsprConfig::default().validate().unwrap();
    }

    #[test]
    fn config_from_toml_keeps_defaults() {
        let c: MsprConfig = toml::from_str("plateau_mode = \"previous\"\nreference = \"poem\"").unwrap();
        assert_eq!(c.plateau_mode, PlateauMode::Previous);
        assert_eq!(c.max_iterations, 8);
        assert_eq!(c.templates, Templates::default());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn draft_count_and_best_follow_scores(
                scores in prop::collection::vec(-1.0f64..=1.0, 12),
                max in 4usize..10,
                eps in 0.0f64..0.05,
                previous in any::<bool>(),
            ) {
                let cfg = MsprConfig {
                    max_iterations: max,
                    plateau_epsilon: eps,
                    plateau_mode: if previous { PlateauMode::Previous } else { PlateauMode::BestSoFar },
                    ..fast()
                };
                let s = Scripted(scores.clone());
                let t = run_mspr(input("seg", "poem"), &Bang, &HashEmbedder::default(), &cfg, Some(&s.overrides())).unwrap();
                prop_assert!(t.drafts.len() <= max);
                prop_assert!(t.drafts.len() >= (cfg.plateau_window + 1).min(max));
                let got = t.scores();
                let b = t.best.unwrap();
                prop_assert!(got.iter().all(|&x| x <= got[b]));
                prop_assert!(got[..b].iter().all(|&x| x < got[b]));
                let replay = termination_stage(&scores, cfg.plateau_window, eps, cfg.plateau_mode, max).unwrap();
                prop_assert_eq!(replay, (t.drafts.len(), t.termination));
            }

            #[test]
            fn best_score_is_monotone_in_budget(scores in prop::collection::vec(-1.0f64..=1.0, 12), max in 4usize..11) {
                let s = Scripted(scores);
                let run = |m: usize| {
                    let cfg = MsprConfig { max_iterations: m, ..fast() };
                    let t = run_mspr(input("seg", "poem"), &Bang, &HashEmbedder::default(), &cfg, Some(&s.overrides())).unwrap();
                    t.best_draft().unwrap().score.unwrap()
                };
                prop_assert!(run(max + 1) >= run(max));
            }
        }
    }
}
