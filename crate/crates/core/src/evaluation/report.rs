use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const REPORT_SCHEMA: &str = "poemtale.metric-report.v1";
pub const AGGREGATE_SCHEMA: &str = "poemtale.aggregate-report.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Poemtale,
    SegmentsOnly,
    SingleImage,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Poemtale, Approach::SegmentsOnly, Approach::SingleImage];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Poemtale => "poemtale",
            Approach::SegmentsOnly => "segments_only",
            Approach::SingleImage => "single_image",
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Approach::ALL
            .into_iter()
            .find(|a| a.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown approach {s:?} (expected poemtale, segments_only or single_image)"))
    }
}

/// Scores for one poem under one approach and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub poem_id: String,
    pub approach: Approach,
    pub model: String,
    pub blip_score: f64,
    pub longclip_score: f64,
    pub emotion_score: f64,
    /// Absent when the sequence has fewer than two images.
    pub consistency_score: Option<f64>,
    pub image_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub approach: Approach,
    pub model: String,
    pub runs: usize,
    pub poem_ids: Vec<String>,
    pub blip_score: f64,
    pub longclip_score: f64,
    pub emotion_score: f64,
    /// Mean over the runs that have a consistency score.
    pub consistency_score: Option<f64>,
    pub consistency_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema: String,
    pub source_schema: String,
    pub rows: Vec<AggregateRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Rows are ordered by approach, then by the order models first appear.
pub fn aggregate_report(runs: &[MetricReport]) -> Result<AggregateReport, EvalError> {
    let first = runs.first().ok_or_else(|| EvalError::Input("no runs to aggregate".into()))?;
    if let Some(other) = runs.iter().find(|r| r.schema != first.schema) {
        return Err(EvalError::Input(format!(
            "mixed report schemas: {:?} and {:?}",
            first.schema, other.schema
        )));
    }
    let mut rows = Vec::new();
    for approach in Approach::ALL {
        let mut models: Vec<&str> = Vec::new();
        for r in runs.iter().filter(|r| r.approach == approach) {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        for model in models {
            let group: Vec<&MetricReport> = runs.iter().filter(|r| r.approach == approach && r.model == model).collect();
            rows.push(AggregateRow {
                approach,
                model: model.to_string(),
                runs: group.len(),
                poem_ids: group.iter().map(|r| r.poem_id.clone()).collect(),
                blip_score: mean(group.iter().map(|r| r.blip_score)).unwrap(),
                longclip_score: mean(group.iter().map(|r| r.longclip_score)).unwrap(),
                emotion_score: mean(group.iter().map(|r| r.emotion_score)).unwrap(),
                consistency_score: mean(group.iter().filter_map(|r| r.consistency_score)),
                consistency_runs: group.iter().filter(|r| r.consistency_score.is_some()).count(),
            });
        }
    }
    Ok(AggregateReport { schema: AGGREGATE_SCHEMA.to_string(), source_schema: first.schema.clone(), rows })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "/".to_string())
}

impl AggregateReport {
    /// Fixed-width table: one block per approach, one line per model.
    pub fn render_text(&self) -> String {
        let header = ["APPROACH", "MODEL", "BLIP", "LONG-CLIP", "EMOTION", "CONSISTENCY", "RUNS"];
        let mut lines: Vec<[String; 7]> = Vec::new();
        let mut last: Option<Approach> = None;
        for r in &self.rows {
            let label = if last == Some(r.approach) { String::new() } else { r.approach.to_string() };
            last = Some(r.approach);
            lines.push([
                label,
                r.model.clone(),
                cell(Some(r.blip_score)),
                cell(Some(r.longclip_score)),
                cell(Some(r.emotion_score)),
                cell(r.consistency_score),
                r.runs.to_string(),
            ]);
        }
        let mut widths = header.map(str::len);
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let fmt_row = |cells: &[String]| {
            cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = String::new();
        writeln!(out, "{}", fmt_row(&header.map(String::from))).unwrap();
        writeln!(out, "{rule}").unwrap();
        let mut prev: Option<Approach> = None;
        for (r, l) in self.rows.iter().zip(&lines) {
            if prev.is_some() && prev != Some(r.approach) {
                writeln!(out, "{rule}").unwrap();
            }
            prev = Some(r.approach);
            writeln!(out, "{}", fmt_row(l)).unwrap();
        }
        writeln!(out, "{rule}").unwrap();
        out.push_str("'/' = not applicable (fewer than two images)\n");
        out
    }
}

fn fixture_row(approach: Approach, model: &str, s: [f64; 3], c: Option<f64>) -> MetricReport {
    MetricReport {
        schema: REPORT_SCHEMA.to_string(),
        poem_id: "published".to_string(),
        approach,
        model: model.to_string(),
        blip_score: s[0],
        longclip_score: s[1],
        emotion_score: s[2],
        consistency_score: c,
        image_count: if c.is_some() { 2 } else { 1 },
    }
}

/// Published reference scores for three image models under each approach.
/// Used to check report layout; these are not recomputed.
pub fn table2_fixture() -> Vec<MetricReport> {
    use Approach::*;
    vec![
        fixture_row(Poemtale, "JANUS", [0.4009, 0.3928, 0.4028], Some(0.2184)),
        fixture_row(Poemtale, "SDXL", [0.4218, 0.4605, 0.3926], Some(0.2859)),
        fixture_row(Poemtale, "PLAYGROUND V3", [0.4333, 0.5897, 0.4249], Some(0.3070)),
        fixture_row(SegmentsOnly, "JANUS", [0.2066, 0.1808, 0.2355], Some(0.1193)),
        fixture_row(SegmentsOnly, "SDXL", [0.3306, 0.2464, 0.2328], Some(0.1864)),
        fixture_row(SegmentsOnly, "PLAYGROUND V3", [0.3969, 0.2567, 0.2383], Some(0.1948)),
        fixture_row(SingleImage, "JANUS", [0.1845, 0.1688, 0.2096], None),
        fixture_row(SingleImage, "SDXL", [0.2846, 0.2131, 0.1692], None),
        fixture_row(SingleImage, "PLAYGROUND V3", [0.3224, 0.2193, 0.2145], None),
    ]
}

/// Expert ratings on a 1-5 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalRow {
    pub approach: Approach,
    pub semantic_alignment: f64,
    pub emotional_resonance: f64,
}

pub fn human_eval_fixture() -> Vec<HumanEvalRow> {
    vec![
        HumanEvalRow { approach: Approach::Poemtale, semantic_alignment: 3.9, emotional_resonance: 4.1 },
        HumanEvalRow { approach: Approach::SingleImage, semantic_alignment: 1.8, emotional_resonance: 1.7 },
        HumanEvalRow { approach: Approach::SegmentsOnly, semantic_alignment: 2.2, emotional_resonance: 2.1 },
    ]
}

pub fn render_human_eval(rows: &[HumanEvalRow]) -> String {
    let mut out = format!("{:<14}  {:<19}  {}\n", "APPROACH", "AXIS", "MEAN EXPERT SCORE");
    for r in rows {
        writeln!(out, "{:<14}  {:<19}  {:.1}", r.approach.as_str(), "semantic alignment", r.semantic_alignment).unwrap();
        writeln!(out, "{:<14}  {:<19}  {:.1}", "", "emotional resonance", r.emotional_resonance).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_run_single_row() {
        let runs = vec![table2_fixture().remove(0)];
        let a = aggregate_report(&runs).unwrap();
        assert_eq!(a.rows.len(), 1);
        assert_eq!(a.rows[0].runs, 1);
    }

    #[test]
    fn mixed_schemas_rejected() {
        let mut runs = table2_fixture();
        runs[3].schema = "poemtale.metric-report.v0".into();
        assert!(aggregate_report(&runs).is_err());
        assert!(aggregate_report(&[]).is_err());
    }

    #[test]
    fn rows_follow_approach_then_first_model_order() {
        let mut runs = table2_fixture();
        runs.reverse();
        let a = aggregate_report(&runs).unwrap();
        let order: Vec<(Approach, &str)> = a.rows.iter().map(|r| (r.approach, r.model.as_str())).collect();
        assert_eq!(order[0], (Approach::Poemtale, "PLAYGROUND V3"));
        assert_eq!(order[8], (Approach::SingleImage, "JANUS"));
    }

    #[test]
    fn approach_parses_both_spellings() {
        assert_eq!("segments-only".parse::<Approach>().unwrap(), Approach::SegmentsOnly);
        assert!("other".parse::<Approach>().is_err());
    }

    #[test]
    fn human_eval_renders_one_decimal() {
        let t = render_human_eval(&human_eval_fixture());
        assert!(t.contains("3.9") && t.contains("4.1") && t.contains("1.7"));
    }
}
