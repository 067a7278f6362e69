use serde::Serialize;

use super::{has_html, normalize_text, GoldSegment, Poem};

pub const VALIDATION_SCHEMA: &str = "poemtale.validation.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueCode {
    MalformedJson,
    InvalidUtf8,
    DuplicateId,
    DuplicateRecord,
    EmptyPoem,
    UnknownEmotion,
    GoldCoverageGap,
    GoldOverlap,
    GoldOutOfRange,
    EmptyGoldSegment,
    ResidualHtml,
    UnnormalizedText,
    EmptyTitle,
    EmptyPoet,
    DuplicateConsecutiveLine,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::MalformedJson => "malformed_json",
            IssueCode::InvalidUtf8 => "invalid_utf8",
            IssueCode::DuplicateId => "duplicate_id",
            IssueCode::DuplicateRecord => "duplicate_record",
            IssueCode::EmptyPoem => "empty_poem",
            IssueCode::UnknownEmotion => "unknown_emotion",
            IssueCode::GoldCoverageGap => "gold_coverage_gap",
            IssueCode::GoldOverlap => "gold_overlap",
            IssueCode::GoldOutOfRange => "gold_out_of_range",
            IssueCode::EmptyGoldSegment => "empty_gold_segment",
            IssueCode::ResidualHtml => "residual_html",
            IssueCode::UnnormalizedText => "unnormalized_text",
            IssueCode::EmptyTitle => "empty_title",
            IssueCode::EmptyPoet => "empty_poet",
            IssueCode::DuplicateConsecutiveLine => "duplicate_consecutive_line",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            IssueCode::UnnormalizedText | IssueCode::DuplicateConsecutiveLine => Severity::Warning,
            _ => Severity::Error,
        }
    }

    /// Problems that the parser already repairs or rejects; a parsed poem
    /// never carries them.
    pub fn is_parse_level(self) -> bool {
        !matches!(
            self,
            IssueCode::EmptyTitle | IssueCode::EmptyPoet | IssueCode::DuplicateConsecutiveLine
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub code: IssueCode,
    pub severity: Severity,
    pub message: String,
    pub location: String,
}

impl Issue {
    fn new(code: IssueCode, location: impl Into<String>, message: impl Into<String>) -> Self {
        Issue { code, severity: code.severity(), message: message.into(), location: location.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub poem_id: String,
    pub issues: Vec<Issue>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(poem_id: impl Into<String>, issues: Vec<Issue>) -> Self {
        let passed = issues.iter().all(|i| i.severity != Severity::Error);
        ValidationReport { poem_id: poem_id.into(), issues, passed }
    }
}

/// Versioned wrapper written by the `validate` command.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationDocument {
    pub schema: &'static str,
    pub reports: Vec<ValidationReport>,
    pub rejected_records: Vec<super::RecordError>,
}

/// Checks gold segments for order, overlap, range and full coverage of
/// `[0, line_count)`.
pub fn gold_segment_issues(segments: &[GoldSegment], line_count: usize) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut cursor = 0;
    for (k, seg) in segments.iter().enumerate() {
        let loc = format!("gold_segments[{k}]");
        if seg.is_empty() {
            issues.push(Issue::new(
                IssueCode::EmptyGoldSegment,
                &loc,
                format!("segment [{}, {}) is empty", seg.start, seg.end),
            ));
            continue;
        }
        if seg.end > line_count {
            issues.push(Issue::new(
                IssueCode::GoldOutOfRange,
                &loc,
                format!("segment end {} exceeds line count {line_count}", seg.end),
            ));
        }
        if seg.start < cursor {
            issues.push(Issue::new(
                IssueCode::GoldOverlap,
                &loc,
                format!("segment starts at {} but previous segment ends at {cursor}", seg.start),
            ));
        } else if seg.start > cursor {
            issues.push(Issue::new(
                IssueCode::GoldCoverageGap,
                &loc,
                format!("lines [{cursor}, {}) are not covered", seg.start),
            ));
        }
        cursor = cursor.max(seg.end);
    }
    if cursor < line_count {
        issues.push(Issue::new(
            IssueCode::GoldCoverageGap,
            "gold_segments",
            format!("lines [{cursor}, {line_count}) are not covered"),
        ));
    }
    issues
}

pub fn validate_poem(poem: &Poem) -> ValidationReport {
    let mut issues = Vec::new();

    if normalize_text(&poem.title).is_empty() {
        issues.push(Issue::new(IssueCode::EmptyTitle, "title", "title is empty"));
    }
    if normalize_text(&poem.poet).is_empty() {
        issues.push(Issue::new(IssueCode::EmptyPoet, "poet", "poet is empty"));
    }
    if poem.lines.is_empty() {
        issues.push(Issue::new(IssueCode::EmptyPoem, "lines", "poem has no lines"));
    }

    for (field, value) in [("title", &poem.title), ("poet", &poem.poet), ("theme", &poem.theme)] {
        if has_html(value) {
            issues.push(Issue::new(IssueCode::ResidualHtml, field, "contains HTML markup"));
        }
    }

    for (i, line) in poem.lines.iter().enumerate() {
        let loc = format!("lines[{i}]");
        if has_html(line) {
            issues.push(Issue::new(IssueCode::ResidualHtml, &loc, format!("contains HTML markup: {line:?}")));
        } else if normalize_text(line) != *line {
            issues.push(Issue::new(IssueCode::UnnormalizedText, &loc, "line is not normalized"));
        }
        if normalize_text(line).is_empty() {
            issues.push(Issue::new(IssueCode::EmptyPoem, &loc, "blank line stored as poem line"));
        }
        if i > 0 && !line.is_empty() && normalize_text(line) == normalize_text(&poem.lines[i - 1]) {
            issues.push(Issue::new(
                IssueCode::DuplicateConsecutiveLine,
                &loc,
                "repeats the previous line",
            ));
        }
    }

    if let Some(gold) = &poem.gold_segments {
        issues.extend(gold_segment_issues(gold, poem.lines.len()));
    }

    ValidationReport::new(poem.id.clone(), issues)
}
