use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use poemtale::corpus::{
    corpus_stats, read_corpus_file, validate_poem, Poem, Severity, StatsDocument, ValidationDocument,
    REFERENCE_P4I_STATS, STATS_SCHEMA, VALIDATION_SCHEMA,
};
use poemtale::evaluation::{
    aggregate_report, evaluate_sequence, human_eval_fixture, render_human_eval, table2_fixture, Approach,
    MetricReport, SequenceInputs,
};
use poemtale::generation::{generate_sequence, read_sequence, write_sequence, GenerationRequest};
use poemtale::pipeline::{run_pipeline, PipelineError, PoemPlan, Providers, RunConfig, PLAN_FILE};
use poemtale::refinement::{run_mspr, MsprInput};
use poemtale::segmentation::{annotate_lines, segment_poem, BoundaryPolicy};

#[derive(Parser)]
#[command(name = "poemtale", version, about = "Poem to image-sequence pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics as JSON.
    Stats {
        corpus: PathBuf,
        /// Also print the reference statistics of the full annotated corpus.
        #[arg(long)]
        reference: bool,
    },
    /// Validate every record; exits 1 if any error is found.
    Validate { corpus: PathBuf },
    /// Segment one poem and print the segments as JSON.
    Segment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        poem: String,
        /// TOML or JSON boundary policy overriding the config's.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run description refinement for one poem's segments.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        poem: String,
        /// Only this segment index.
        #[arg(long)]
        segment: Option<usize>,
    },
    /// Generate images for a JSON generation request.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        request: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a generated sequence for one poem.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        poem: String,
        /// Path to a sequence.json.
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        approach: Option<Approach>,
    },
    /// Aggregate metric reports into a table.
    Report {
        /// metrics.json or report.json files.
        files: Vec<PathBuf>,
        /// Render a bundled table instead: `published` or `human`.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Full pipeline run.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        approach: Option<Approach>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(v)? + "\n"))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn find_poem(cfg: &RunConfig, id: &str) -> Result<Poem> {
    let corpus = read_corpus_file(&cfg.corpus_path).with_context(|| cfg.corpus_path.display().to_string())?;
    corpus.find(id).cloned().ok_or_else(|| anyhow!("poem {id:?} not in {}", cfg.corpus_path.display()))
}

fn stats(corpus: &Path, reference: bool) -> Result<ExitCode> {
    let parsed = read_corpus_file(corpus).with_context(|| corpus.display().to_string())?;
    for e in &parsed.errors {
        eprintln!("rejected {e}");
    }
    let stats = corpus_stats(&parsed.poems).map_err(|e| anyhow!("{e}"))?;
    print_json(&StatsDocument { schema: STATS_SCHEMA.to_string(), stats })?;
    if reference {
        print_json(&StatsDocument { schema: STATS_SCHEMA.to_string(), stats: REFERENCE_P4I_STATS })?;
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(corpus: &Path) -> Result<ExitCode> {
    let parsed = read_corpus_file(corpus).with_context(|| corpus.display().to_string())?;
    let reports: Vec<_> = parsed.poems.iter().map(validate_poem).collect();
    let failed = !parsed.errors.is_empty()
        || reports.iter().any(|r| r.issues.iter().any(|i| i.severity == Severity::Error));
    print_json(&ValidationDocument { schema: VALIDATION_SCHEMA, reports, rejected_records: parsed.errors })?;
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn read_policy(path: &Path) -> Result<BoundaryPolicy> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let policy: BoundaryPolicy = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    Ok(policy)
}

fn segment(config: &Path, poem: &str, policy: Option<&Path>) -> Result<ExitCode> {
    let mut cfg = load_config(config)?;
    if let Some(p) = policy {
        cfg.segmentation = read_policy(p)?;
    }
    let poem = find_poem(&cfg, poem)?;
    let providers = Providers::from_config(&cfg, None)?;
    let ann = annotate_lines(&poem, &*providers.tagger, &*providers.classifier, &cfg.segmentation, &cfg.providers.retry)?;
    print_json(&segment_poem(&poem, &ann, &cfg.segmentation)?)?;
    Ok(ExitCode::SUCCESS)
}

fn refine(config: &Path, poem: &str, only: Option<usize>) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let poem = find_poem(&cfg, poem)?;
    let providers = Providers::from_config(&cfg, None)?;
    let ann = annotate_lines(&poem, &*providers.tagger, &*providers.classifier, &cfg.segmentation, &cfg.providers.retry)?;
    let segments = segment_poem(&poem, &ann, &cfg.segmentation)?;
    if let Some(k) = only {
        if k >= segments.len() {
            bail!("segment {k} out of range; poem has {} segments", segments.len());
        }
    }
    let poem_text = poem.text();
    let mut traces = Vec::new();
    for seg in segments.iter().filter(|s| only.is_none_or(|k| s.index == k)) {
        let id = seg.id();
        let text = seg.text(&poem);
        let input = MsprInput { segment_id: &id, segment_text: &text, poem_text: &poem_text };
        traces.push(run_mspr(input, &*providers.generator, &*providers.scorer, &cfg.mspr, providers.overrides.as_ref())?);
    }
    print_json(&traces)?;
    Ok(ExitCode::SUCCESS)
}

fn generate(config: &Path, request: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let providers = Providers::from_config(&cfg, None)?;
    let text = std::fs::read_to_string(request).with_context(|| request.display().to_string())?;
    let req: GenerationRequest = serde_json::from_str(&text)?;
    let outcome = generate_sequence(&req, &*providers.backend)?;
    let manifest = write_sequence(out, &req.poem_id, &outcome.artifacts)?;
    print_json(&manifest)?;
    match outcome.failure {
        Some(f) => {
            eprintln!("generation stopped at {}: {}", f.segment_id, f.error);
            Ok(ExitCode::from(1))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn evaluate(config: &Path, poem_id: &str, sequence: &Path, approach: Option<Approach>) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let poem = find_poem(&cfg, poem_id)?;
    let providers = Providers::from_config(&cfg, None)?;
    let (_, artifacts) = read_sequence(sequence)?;
    let instructions: Vec<String> = artifacts.iter().map(|a| a.description.clone()).collect();
    let plan_path = sequence.with_file_name(PLAN_FILE);
    let gold = if plan_path.is_file() {
        let plan: PoemPlan = serde_json::from_str(&std::fs::read_to_string(&plan_path)?)?;
        plan.gold_emotions
    } else {
        // No plan on disk: fall back to classifying each description.
        artifacts
            .iter()
            .map(|a| providers.classifier.classify(&a.description).map(|s| s.label))
            .collect::<Result<_, _>>()?
    };
    let report = evaluate_sequence(
        SequenceInputs {
            poem_id: &poem.id,
            approach: approach.unwrap_or(cfg.approach),
            model: &providers.backend.model_name(),
            poem_text: &poem.text(),
            images: &artifacts,
            instructions: &instructions,
            gold_emotions: &gold,
        },
        &*providers.captioner,
        &*providers.embedder,
        &*providers.embedder,
    )?;
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn read_reports(path: &Path) -> Result<Vec<MetricReport>> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).with_context(|| path.display().to_string())?)?;
    Ok(match v.get("runs") {
        Some(runs) => serde_json::from_value(runs.clone())?,
        None if v.is_array() => serde_json::from_value(v)?,
        None => vec![serde_json::from_value(v)?],
    })
}

fn report(files: &[PathBuf], fixture: Option<&str>, json: bool) -> Result<ExitCode> {
    let runs = match fixture {
        Some("published") => table2_fixture(),
        Some("human") => {
            if json {
                print_json(&human_eval_fixture())?;
            } else {
                emit(&render_human_eval(&human_eval_fixture()))?;
            }
            return Ok(ExitCode::SUCCESS);
        }
        Some(other) => bail!("unknown fixture {other:?} (expected published or human)"),
        None => {
            let mut runs = Vec::new();
            for f in files {
                runs.extend(read_reports(f)?);
            }
            runs
        }
    };
    let agg = aggregate_report(&runs)?;
    if json {
        print_json(&agg)?;
    } else {
        emit(&agg.render_text())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(config: &Path, approach: Option<Approach>, seed: Option<u64>, output: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(a) = approach {
        cfg.approach = a;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    let outcome = run_pipeline(&cfg)?;
    let m = &outcome.manifest;
    eprintln!(
        "{} poems, {} failed, {} rejected records, {} live provider calls -> {}",
        m.poems.len(),
        m.failed(),
        m.rejected_records.len(),
        outcome.stats.live_calls,
        cfg.output_dir.display()
    );
    if let Some(r) = &outcome.report {
        emit(&r.render_text())?;
    }
    Ok(ExitCode::from(outcome.exit_code() as u8))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats { corpus, reference } => stats(&corpus, reference),
        Command::Validate { corpus } => validate(&corpus),
        Command::Segment { config, poem, policy } => segment(&config, &poem, policy.as_deref()),
        Command::Refine { config, poem, segment } => refine(&config, &poem, segment),
        Command::Generate { config, request, out } => generate(&config, &request, &out),
        Command::Evaluate { config, poem, sequence, approach } => evaluate(&config, &poem, &sequence, approach),
        Command::Report { files, fixture, json } => report(&files, fixture.as_deref(), json),
        Command::Run { config, approach, seed, output } => run(&config, approach, seed, output),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<PipelineError>() {
                Some(p) => ExitCode::from(p.exit_code() as u8),
                None => ExitCode::from(1),
            }
        }
    }
}
