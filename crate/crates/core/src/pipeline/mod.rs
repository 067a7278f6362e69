//! End-to-end runs: corpus → segments → descriptions → images → metrics →
//! reports, with a response cache in front of every provider.

mod config;
mod gallery;
mod providers;
mod run;

use thiserror::Error;

pub use config::{
    CaptionerConfig, ClassifierConfig, EmbedderConfig, GeneratorConfig, ProviderConfig, RunConfig, SamplingConfig,
    TaggerConfig, TemplatePaths,
};
pub use gallery::render_gallery;
pub use providers::{ProviderStats, Providers};
pub use run::{
    plan_poem, poem_dir_name, process_poem, run_pipeline, run_pipeline_with, PoemPlan, PoemResult, PoemStatus,
    RunManifest, RunOutcome, RunStats, SegmentSource, MANIFEST_FILE, MANIFEST_SCHEMA, PLAN_FILE, REPORT_JSON, REPORT_TXT,
    RUN_STATS_FILE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Poem(String),
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}
