use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gallery::{render_gallery, GALLERY_FILE};
use super::{PipelineError, ProviderStats, Providers, RunConfig};
use crate::corpus::{read_corpus_file, EmotionLabel, Poem, RecordError};
use crate::evaluation::{
    aggregate_report, evaluate_sequence, AggregateReport, Approach, MetricReport, SequenceInputs, EMOTION_PROMPT_VERSION,
};
use crate::generation::{generate_sequence, write_sequence, GenerationRequest, PromptEntry, SEQUENCE_FILE};
use crate::provider::Transport;
use crate::refinement::{run_mspr, MsprInput, RefinementTrace};
use crate::segmentation::{
    annotate_lines, boundary_agreement, dominant_emotion, gold_boundaries, segment_poem, segments_from_gold,
    BoundaryAgreement, LineAnnotation, Segment,
};
use crate::util::sha256_hex;

pub const MANIFEST_SCHEMA: &str = "poemtale.run-manifest.v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const RUN_STATS_FILE: &str = "run_stats.json";
pub const PLAN_FILE: &str = "plan.json";
const POEMS_DIR: &str = "poems";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    Epe,
    Gold,
    WholePoem,
}

/// Everything decided about a poem before any image is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoemPlan {
    pub segment_source: SegmentSource,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<LineAnnotation>>,
    /// Gold vs computed boundaries, when both exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<BoundaryAgreement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<RefinementTrace>,
    pub prompts: Vec<PromptEntry>,
    pub gold_emotions: Vec<EmotionLabel>,
    pub consistency: bool,
}

fn reference_emotion(poem: &Poem, seg: &Segment) -> EmotionLabel {
    poem.gold_emotion_for(seg.start, seg.end).unwrap_or(seg.dominant_emotion)
}

/// Segments the poem and builds one prompt per segment for the configured
/// approach.
pub fn plan_poem(poem: &Poem, cfg: &RunConfig, providers: &Providers) -> Result<PoemPlan, PipelineError> {
    let has_gold = poem.gold_segments.is_some();
    let needs_epe = match cfg.approach {
        Approach::Poemtale => true,
        Approach::SegmentsOnly | Approach::SingleImage => !has_gold,
    };
    let (annotations, epe) = if needs_epe {
        let a = annotate_lines(poem, &*providers.tagger, &*providers.classifier, &cfg.segmentation, &cfg.providers.retry)
            .map_err(|e| PipelineError::Poem(e.to_string()))?;
        let s = segment_poem(poem, &a, &cfg.segmentation).map_err(|e| PipelineError::Poem(e.to_string()))?;
        (Some(a), Some(s))
    } else {
        (None, None)
    };
    let agreement = match (&epe, gold_boundaries(poem)) {
        (Some(s), Some(g)) => {
            let computed: Vec<usize> = s.iter().skip(1).map(|s| s.start).collect();
            Some(boundary_agreement(&g, &computed))
        }
        _ => None,
    };
    let poem_text = poem.text();
    let mut traces = Vec::new();

    let (segment_source, segments, prompts) = match cfg.approach {
        Approach::Poemtale => {
            let segments = epe.expect("computed above");
            let mut prompts = Vec::with_capacity(segments.len());
            for seg in &segments {
                let id = seg.id();
                let text = seg.text(poem);
                let input = MsprInput { segment_id: &id, segment_text: &text, poem_text: &poem_text };
                let trace = run_mspr(input, &*providers.generator, &*providers.scorer, &cfg.mspr, providers.overrides.as_ref())
                    .map_err(|e| PipelineError::Poem(format!("{id}: {e}")))?;
                let best = trace.best_draft().map(|d| d.text.clone());
                let error = trace.error.clone();
                traces.push(trace);
                match best {
                    Some(text) => prompts.push(PromptEntry { segment_id: id, text }),
                    None => {
                        return Err(PipelineError::Poem(format!(
                            "{id}: no description produced: {}",
                            error.unwrap_or_default()
                        )))
                    }
                }
            }
            (SegmentSource::Epe, segments, prompts)
        }
        Approach::SegmentsOnly => {
            let (source, segments) = match segments_from_gold(poem, annotations.as_deref()) {
                Some(g) => (SegmentSource::Gold, g),
                None => (SegmentSource::Epe, epe.expect("computed above")),
            };
            let prompts = segments.iter().map(|s| PromptEntry { segment_id: s.id(), text: s.text(poem) }).collect();
            (source, segments, prompts)
        }
        Approach::SingleImage => {
            let n = poem.lines.len();
            let dominant = poem
                .gold_emotion_for(0, n)
                .or_else(|| annotations.as_deref().map(dominant_emotion))
                .unwrap_or(EmotionLabel::Neutral);
            let seg = Segment {
                poem_id: poem.id.clone(),
                index: 0,
                start: 0,
                end: n,
                dominant_emotion: dominant,
                entities: annotations.iter().flatten().flat_map(|a| a.entities.iter().cloned()).collect(),
            };
            let prompts = vec![PromptEntry { segment_id: seg.id(), text: poem_text.clone() }];
            (SegmentSource::WholePoem, vec![seg], prompts)
        }
    };
    let gold_emotions = segments.iter().map(|s| reference_emotion(poem, s)).collect();
    Ok(PoemPlan {
        segment_source,
        segments,
        annotations,
        agreement,
        traces,
        prompts,
        gold_emotions,
        consistency: cfg.consistency(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoemStatus {
    Completed,
    Failed,
}

/// One poem's entry in the run manifest. Paths are relative to the output
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoemResult {
    pub poem_id: String,
    pub status: PoemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    pub segments: usize,
    pub images: usize,
    #[serde(skip)]
    pub prompts: Vec<PromptEntry>,
    #[serde(skip)]
    pub elapsed_ms: u128,
}

/// Directory name for a poem id: safe characters are kept, anything else is
/// replaced and a short hash of the id is appended to keep names distinct.
pub fn poem_dir_name(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if cleaned == id && !id.is_empty() && !id.starts_with('.') {
        cleaned
    } else {
        format!("_{}-{}", cleaned.trim_start_matches('.'), &sha256_hex(id)[..8])
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

/// Plans, generates and scores one poem, writing its files under
/// `<output_dir>/poems/<name>/`. Failures are captured in the result.
pub fn process_poem(poem: &Poem, cfg: &RunConfig, providers: &Providers) -> PoemResult {
    let started = Instant::now();
    let dir_rel = format!("{POEMS_DIR}/{}", poem_dir_name(&poem.id));
    let mut result = PoemResult {
        poem_id: poem.id.clone(),
        status: PoemStatus::Failed,
        error: None,
        dir: dir_rel.clone(),
        sequence: None,
        report: None,
        segments: 0,
        images: 0,
        prompts: Vec::new(),
        elapsed_ms: 0,
    };
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| process_inner(poem, cfg, providers, &dir_rel, &mut result)));
    match outcome {
        Ok(Ok(())) => result.status = PoemStatus::Completed,
        Ok(Err(e)) => result.error = Some(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            result.error = Some(format!("internal error: {msg}"));
        }
    }
    if let Some(e) = &result.error {
        tracing::warn!(poem = %poem.id, error = %e, "poem failed");
    }
    result.elapsed_ms = started.elapsed().as_millis();
    result
}

fn process_inner(
    poem: &Poem,
    cfg: &RunConfig,
    providers: &Providers,
    dir_rel: &str,
    result: &mut PoemResult,
) -> Result<(), PipelineError> {
    let dir = cfg.output_dir.join(dir_rel);
    std::fs::create_dir_all(&dir)?;
    let plan = plan_poem(poem, cfg, providers)?;
    result.segments = plan.segments.len();
    write_json(&dir.join(PLAN_FILE), &plan)?;

    let request = GenerationRequest {
        poem_id: poem.id.clone(),
        prompts: plan.prompts.clone(),
        consistency: plan.consistency,
        style_directives: cfg.style_directives.clone(),
        seed: cfg.seed,
        width: cfg.image_width,
        height: cfg.image_height,
    };
    result.prompts = (0..request.prompts.len())
        .map(|k| PromptEntry { segment_id: request.prompts[k].segment_id.clone(), text: request.rendered_prompt(k) })
        .collect();
    let outcome = generate_sequence(&request, &*providers.backend).map_err(|e| PipelineError::Poem(e.to_string()))?;
    write_sequence(&dir, &poem.id, &outcome.artifacts)?;
    result.sequence = Some(format!("{dir_rel}/{SEQUENCE_FILE}"));
    result.images = outcome.artifacts.len();
    if let Some(f) = outcome.failure {
        return Err(PipelineError::Poem(format!("image generation failed at {}: {}", f.segment_id, f.error)));
    }

    let instructions: Vec<String> = result.prompts.iter().map(|p| p.text.clone()).collect();
    let model = providers.backend.model_name();
    let report = evaluate_sequence(
        SequenceInputs {
            poem_id: &poem.id,
            approach: cfg.approach,
            model: &model,
            poem_text: &poem.text(),
            images: &outcome.artifacts,
            instructions: &instructions,
            gold_emotions: &plan.gold_emotions,
        },
        &*providers.captioner,
        &*providers.embedder,
        &*providers.embedder,
    )
    .map_err(|e| PipelineError::Poem(format!("evaluation failed: {e}")))?;
    write_json(&dir.join("metrics.json"), &report)?;
    result.report = Some(report);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub config_hash: String,
    pub corpus_sha256: String,
    pub template_hash: String,
    pub emotion_prompt_version: String,
    pub approach: Approach,
    pub model: String,
    pub seed: u64,
    pub consistency: bool,
    pub poems: Vec<PoemResult>,
    pub rejected_records: Vec<serde_json::Value>,
    pub report_json: Option<String>,
    pub report_txt: Option<String>,
    pub gallery: String,
}

impl RunManifest {
    pub fn failed(&self) -> usize {
        self.poems.iter().filter(|p| p.status == PoemStatus::Failed).count()
    }
}

/// Timing and provider call counts; kept apart from the manifest so the
/// manifest only depends on inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub total_ms: u128,
    pub poem_ms: BTreeMap<String, u128>,
    pub providers: ProviderStats,
    pub live_calls: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub stats: RunStats,
    pub report: Option<AggregateReport>,
}

impl RunOutcome {
    /// 0 when every poem completed and every record parsed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.manifest.failed() == 0 && self.manifest.rejected_records.is_empty() {
            0
        } else {
            1
        }
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    aggregate: &'a AggregateReport,
    runs: Vec<&'a MetricReport>,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    run_pipeline_with(cfg, None)
}

/// Like [`run_pipeline`], with an explicit transport for HTTP providers.
pub fn run_pipeline_with(cfg: &RunConfig, transport: Option<Arc<dyn Transport>>) -> Result<RunOutcome, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let corpus_bytes = std::fs::read(&cfg.corpus_path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", cfg.corpus_path.display())))?;
    let corpus = read_corpus_file(&cfg.corpus_path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", cfg.corpus_path.display())))?;
    for e in &corpus.errors {
        tracing::warn!(record = %e, "corpus record rejected");
    }
    let providers = Providers::from_config(cfg, transport)?;
    std::fs::create_dir_all(cfg.output_dir.join(POEMS_DIR))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let results: Vec<PoemResult> =
        pool.install(|| corpus.poems.par_iter().map(|p| process_poem(p, cfg, &providers)).collect());

    let reports: Vec<&MetricReport> = results.iter().filter_map(|r| r.report.as_ref()).collect();
    let owned: Vec<MetricReport> = reports.iter().map(|r| (*r).clone()).collect();
    let aggregate = if owned.is_empty() { None } else { Some(aggregate_report(&owned).map_err(|e| PipelineError::Poem(e.to_string()))?) };
    let (report_json, report_txt) = match &aggregate {
        Some(a) => {
            write_json(&cfg.output_dir.join(REPORT_JSON), &ReportFile { aggregate: a, runs: reports.clone() })?;
            std::fs::write(cfg.output_dir.join(REPORT_TXT), a.render_text())?;
            (Some(REPORT_JSON.to_string()), Some(REPORT_TXT.to_string()))
        }
        None => (None, None),
    };
    std::fs::write(cfg.output_dir.join(GALLERY_FILE), render_gallery(cfg.approach, &results))?;

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        config_hash: cfg.config_hash(),
        corpus_sha256: sha256_hex(&corpus_bytes),
        template_hash: cfg.mspr.templates.hash(),
        emotion_prompt_version: EMOTION_PROMPT_VERSION.to_string(),
        approach: cfg.approach,
        model: providers.backend.model_name(),
        seed: cfg.seed,
        consistency: cfg.consistency(),
        rejected_records: corpus.errors.iter().map(record_json).collect(),
        poems: results,
        report_json,
        report_txt,
        gallery: GALLERY_FILE.to_string(),
    };
    write_json(&cfg.output_dir.join(MANIFEST_FILE), &manifest)?;

    let stats = RunStats {
        total_ms: started.elapsed().as_millis(),
        poem_ms: manifest.poems.iter().map(|p| (p.poem_id.clone(), p.elapsed_ms)).collect(),
        providers: providers.stats(),
        live_calls: providers.live_calls(),
    };
    write_json(&cfg.output_dir.join(RUN_STATS_FILE), &stats)?;
    Ok(RunOutcome { manifest, stats, report: aggregate })
}

fn record_json(e: &RecordError) -> serde_json::Value {
    serde_json::to_value(e).expect("record errors serialize")
}
