use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{normalize_text, Poem};

pub const STATS_SCHEMA: &str = "poemtale.corpus-stats.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub poem_count: usize,
    pub max_words: usize,
    pub min_words: usize,
    pub mean_words: f64,
    pub theme_count: usize,
    pub distinct_poets: usize,
}

/// Published summary of the full 1111-poem P4I release. Useful as an
/// expectation when running `stats` over that corpus; the mean is reported
/// there rounded to a whole word.
pub const REFERENCE_P4I_STATS: CorpusStats = CorpusStats {
    poem_count: 1111,
    max_words: 460,
    min_words: 16,
    mean_words: 180.0,
    theme_count: 6,
    distinct_poets: 798,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsDocument {
    pub schema: String,
    #[serde(flatten)]
    pub stats: CorpusStats,
}

impl From<CorpusStats> for StatsDocument {
    fn from(stats: CorpusStats) -> Self {
        StatsDocument { schema: STATS_SCHEMA.to_string(), stats }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("corpus statistics are undefined for an empty corpus")]
pub struct EmptyCorpus;

pub fn corpus_stats(poems: &[Poem]) -> Result<CorpusStats, EmptyCorpus> {
    if poems.is_empty() {
        return Err(EmptyCorpus);
    }
    let counts: Vec<usize> = poems.iter().map(Poem::word_count).collect();
    let total: usize = counts.iter().sum();
    let themes: HashSet<String> = poems.iter().map(|p| normalize_text(&p.theme)).collect();
    let poets: HashSet<String> = poems.iter().map(|p| normalize_text(&p.poet)).collect();
    Ok(CorpusStats {
        poem_count: poems.len(),
        max_words: *counts.iter().max().expect("non-empty"),
        min_words: *counts.iter().min().expect("non-empty"),
        mean_words: total as f64 / poems.len() as f64,
        theme_count: themes.len(),
        distinct_poets: poets.len(),
    })
}
