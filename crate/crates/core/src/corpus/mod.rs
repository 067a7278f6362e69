//! Poem corpus ingestion: the JSON-lines wire format, cleanup, validation
//! and summary statistics.

mod normalize;
mod stats;
mod validate;

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use normalize::{has_html, normalize_lines, normalize_text};
pub use stats::{corpus_stats, CorpusStats, StatsDocument, REFERENCE_P4I_STATS, STATS_SCHEMA};
pub use validate::{
    gold_segment_issues, validate_poem, Issue, IssueCode, Severity, ValidationDocument,
    ValidationReport, VALIDATION_SCHEMA,
};

use crate::util::sha256_hex;

/// The closed seven-way emotion taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger,
    Disgust,
    Fear,
    Joy,
    Neutral,
    Sadness,
    Surprise,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Joy,
        EmotionLabel::Neutral,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Joy => "joy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Surprise => "surprise",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown emotion label {0:?}")]
pub struct UnknownEmotion(pub String);

impl FromStr for EmotionLabel {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

/// Half-open line range `[start, end)` with its annotated emotion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSegment {
    pub start: usize,
    pub end: usize,
    pub emotion: EmotionLabel,
}

impl GoldSegment {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One annotated poem. `lines` never contains blank entries; blank lines in
/// the source are kept as `stanza_breaks`, each the index of the line that
/// opens a new stanza.
#[derive(Debug, Clone, PartialEq)]
pub struct Poem {
    pub id: String,
    pub title: String,
    pub poet: String,
    pub theme: String,
    pub protagonist: String,
    pub lines: Vec<String>,
    pub stanza_breaks: Vec<usize>,
    pub gold_segments: Option<Vec<GoldSegment>>,
}

impl Poem {
    /// Whitespace-token count of the normalized body (title excluded).
    pub fn word_count(&self) -> usize {
        self.lines
            .iter()
            .map(|l| normalize_text(l).split_whitespace().count())
            .sum()
    }

    /// Body text with one line per row.
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }

    pub fn lines_text(&self, start: usize, end: usize) -> String {
        self.lines[start..end].join("\n")
    }

    /// Gold emotion with the largest overlap on `[start, end)`; ties go to the
    /// earliest gold segment.
    pub fn gold_emotion_for(&self, start: usize, end: usize) -> Option<EmotionLabel> {
        let gold = self.gold_segments.as_ref()?;
        let mut best: Option<(usize, EmotionLabel)> = None;
        for seg in gold {
            let overlap = seg.end.min(end).saturating_sub(seg.start.max(start));
            if overlap > 0 && best.is_none_or(|(o, _)| overlap > o) {
                best = Some((overlap, seg.emotion));
            }
        }
        best.map(|(_, e)| e)
    }
}

/// Deterministic id for records that arrive without one.
pub fn assign_id(title: &str, poet: &str) -> String {
    let digest = sha256_hex(format!("{}\u{1f}{}", normalize_text(title), normalize_text(poet)));
    format!("p-{}", &digest[..12])
}

#[derive(Debug, Deserialize)]
struct RawGoldSegment {
    start: usize,
    end: usize,
    emotion: String,
}

#[derive(Debug, Deserialize)]
struct RawPoem {
    #[serde(default)]
    id: Option<String>,
    title: String,
    poet: String,
    theme: String,
    #[serde(default)]
    protagonist: Option<String>,
    lines: Vec<String>,
    #[serde(default)]
    gold_segments: Option<Vec<RawGoldSegment>>,
}

#[derive(Serialize)]
struct WireGoldSegment<'a> {
    start: usize,
    end: usize,
    emotion: &'a str,
}

#[derive(Serialize)]
struct WirePoem<'a> {
    id: &'a str,
    title: &'a str,
    poet: &'a str,
    theme: &'a str,
    #[serde(skip_serializing_if = "str::is_empty")]
    protagonist: &'a str,
    lines: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold_segments: Option<Vec<WireGoldSegment<'a>>>,
}

/// A record that could not be turned into a [`Poem`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordError {
    /// 1-based line number in the input stream.
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poem_id: Option<String>,
    pub code: IssueCode,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.code.as_str(), self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCorpus {
    pub poems: Vec<Poem>,
    pub errors: Vec<RecordError>,
}

impl ParsedCorpus {
    pub fn find(&self, id: &str) -> Option<&Poem> {
        self.poems.iter().find(|p| p.id == id)
    }
}

/// Parses a JSON-lines corpus. Bad records are collected in
/// [`ParsedCorpus::errors`] and parsing carries on with the next line.
pub fn parse_corpus<R: BufRead>(mut reader: R) -> std::io::Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    let mut seen_ids = HashSet::new();
    let mut seen_records = HashSet::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let text = match std::str::from_utf8(&buf) {
            Ok(t) => t,
            Err(e) => {
                out.errors.push(RecordError {
                    line: line_no,
                    poem_id: None,
                    code: IssueCode::InvalidUtf8,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        let poem = match build_poem(text) {
            Ok(p) => p,
            Err((code, poem_id, message)) => {
                out.errors.push(RecordError { line: line_no, poem_id, code, message });
                continue;
            }
        };
        if !seen_ids.insert(poem.id.clone()) {
            out.errors.push(RecordError {
                line: line_no,
                poem_id: Some(poem.id.clone()),
                code: IssueCode::DuplicateId,
                message: format!("id {:?} already used by an earlier record", poem.id),
            });
            continue;
        }
        if !seen_records.insert((poem.title.clone(), poem.poet.clone())) {
            out.errors.push(RecordError {
                line: line_no,
                poem_id: Some(poem.id.clone()),
                code: IssueCode::DuplicateRecord,
                message: format!("{:?} by {:?} appears earlier in the corpus", poem.title, poem.poet),
            });
            continue;
        }
        out.poems.push(poem);
    }
    Ok(out)
}

type BuildError = (IssueCode, Option<String>, String);

fn build_poem(text: &str) -> Result<Poem, BuildError> {
    let raw: RawPoem = serde_json::from_str(text)
        .map_err(|e| (IssueCode::MalformedJson, None, e.to_string()))?;
    let title = normalize_text(&raw.title);
    let poet = normalize_text(&raw.poet);
    let id = match raw.id.as_deref().map(str::trim) {
        Some(id) if !id.is_empty() => id.to_string(),
        _ => assign_id(&title, &poet),
    };

    let mut lines = Vec::new();
    let mut stanza_breaks = Vec::new();
    let mut pending_break = false;
    for entry in &raw.lines {
        for line in normalize_lines(entry) {
            if line.is_empty() {
                pending_break = !lines.is_empty();
                continue;
            }
            if pending_break {
                stanza_breaks.push(lines.len());
                pending_break = false;
            }
            lines.push(line);
        }
    }
    if lines.is_empty() {
        return Err((IssueCode::EmptyPoem, Some(id), "poem has no non-blank lines".into()));
    }

    let gold_segments = match raw.gold_segments {
        None => None,
        Some(raw_segments) => {
            let mut segments = Vec::with_capacity(raw_segments.len());
            for (k, seg) in raw_segments.iter().enumerate() {
                let emotion = seg.emotion.trim().to_lowercase().parse().map_err(|e: UnknownEmotion| {
                    (IssueCode::UnknownEmotion, Some(id.clone()), format!("gold_segments[{k}]: {e}"))
                })?;
                segments.push(GoldSegment { start: seg.start, end: seg.end, emotion });
            }
            if let Some(issue) = gold_segment_issues(&segments, lines.len())
                .into_iter()
                .find(|i| i.severity == Severity::Error)
            {
                return Err((issue.code, Some(id), issue.message));
            }
            Some(segments)
        }
    };

    Ok(Poem {
        id,
        title,
        poet,
        theme: normalize_text(&raw.theme),
        protagonist: raw.protagonist.as_deref().map(normalize_text).unwrap_or_default(),
        lines,
        stanza_breaks,
        gold_segments,
    })
}

/// Encodes one poem as a single JSON line (no trailing newline). Stanza
/// breaks come back out as empty strings in `lines`.
pub fn poem_to_json_line(poem: &Poem) -> String {
    let mut lines = Vec::with_capacity(poem.lines.len() + poem.stanza_breaks.len());
    for (i, line) in poem.lines.iter().enumerate() {
        if poem.stanza_breaks.contains(&i) {
            lines.push("");
        }
        lines.push(line.as_str());
    }
    let wire = WirePoem {
        id: &poem.id,
        title: &poem.title,
        poet: &poem.poet,
        theme: &poem.theme,
        protagonist: &poem.protagonist,
        lines,
        gold_segments: poem.gold_segments.as_ref().map(|g| {
            g.iter()
                .map(|s| WireGoldSegment { start: s.start, end: s.end, emotion: s.emotion.as_str() })
                .collect()
        }),
    };
    serde_json::to_string(&wire).expect("poem serializes")
}

pub fn write_corpus<W: Write>(mut writer: W, poems: &[Poem]) -> std::io::Result<()> {
    for poem in poems {
        writeln!(writer, "{}", poem_to_json_line(poem))?;
    }
    Ok(())
}

pub fn read_corpus_file(path: &std::path::Path) -> std::io::Result<ParsedCorpus> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> ParsedCorpus {
        parse_corpus(text.as_bytes()).unwrap()
    }

    const ONE: &str = r#"{"id":"ozy","title":"Ozymandias","poet":"Percy Bysshe Shelley","theme":"narrative","lines":["I met a traveller from an antique land,","Who said—"]}"#;

    #[test]
    fn single_record() {
        let c = parse(ONE);
        assert_eq!(c.poems.len(), 1);
        assert!(c.errors.is_empty());
        assert_eq!(c.poems[0].id, "ozy");
        assert_eq!(c.poems[0].lines.len(), 2);
    }

    #[test]
    fn empty_stream() {
        let c = parse("");
        assert!(c.poems.is_empty());
        assert!(c.errors.is_empty());
    }

    #[test]
    fn malformed_line_does_not_stop_parsing() {
        let text = format!("{{not json\n{ONE}\n");
        let c = parse(&text);
        assert_eq!(c.poems.len(), 1);
        assert_eq!(c.errors.len(), 1);
        assert_eq!(c.errors[0].line, 1);
        assert_eq!(c.errors[0].code, IssueCode::MalformedJson);
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let other = ONE.replace("Ozymandias", "Other");
        let c = parse(&format!("{ONE}\n{other}\n"));
        assert_eq!(c.poems.len(), 1);
        assert_eq!(c.errors[0].code, IssueCode::DuplicateId);
        assert_eq!(c.errors[0].line, 2);
    }

    #[test]
    fn duplicate_title_and_poet_is_an_error() {
        let other = ONE.replace("\"ozy\"", "\"ozy-2\"").replace("Ozymandias", "<b>Ozymandias</b>");
        let c = parse(&format!("{ONE}\n{other}\n"));
        assert_eq!(c.poems.len(), 1);
        assert_eq!(c.errors[0].code, IssueCode::DuplicateRecord);
    }

    #[test]
    fn missing_id_is_assigned_from_title_and_poet() {
        let text = r#"{"title":"A","poet":"B","theme":"ode","lines":["x"]}"#;
        let a = parse(text);
        let b = parse(text);
        assert_eq!(a.poems[0].id, b.poems[0].id);
        assert_eq!(a.poems[0].id, assign_id("A", "B"));
    }

    #[test]
    fn blank_lines_become_stanza_breaks() {
        let text = r#"{"id":"s","title":"t","poet":"p","theme":"ode","lines":["","one","two","  ","three\n\nfour",""]}"#;
        let p = &parse(text).poems[0];
        assert_eq!(p.lines, vec!["one", "two", "three", "four"]);
        assert_eq!(p.stanza_breaks, vec![2, 3]);
    }

    #[test]
    fn unknown_emotion_is_rejected() {
        let text = r#"{"id":"e","title":"t","poet":"p","theme":"ode","lines":["a"],"gold_segments":[{"start":0,"end":1,"emotion":"melancholy"}]}"#;
        let c = parse(text);
        assert!(c.poems.is_empty());
        assert_eq!(c.errors[0].code, IssueCode::UnknownEmotion);
    }

    #[test]
    fn gold_gap_is_rejected_at_parse() {
        let text = r#"{"id":"g","title":"t","poet":"p","theme":"ode","lines":["a","b","c"],"gold_segments":[{"start":0,"end":2,"emotion":"joy"}]}"#;
        let c = parse(text);
        assert_eq!(c.errors[0].code, IssueCode::GoldCoverageGap);
    }

    #[test]
    fn invalid_utf8_is_a_record_error() {
        let mut bytes = b"\xff\xfe\n".to_vec();
        bytes.extend_from_slice(ONE.as_bytes());
        let c = parse_corpus(&bytes[..]).unwrap();
        assert_eq!(c.poems.len(), 1);
        assert_eq!(c.errors[0].code, IssueCode::InvalidUtf8);
    }

    #[test]
    fn emotion_parse_is_closed() {
        assert_eq!("joy".parse::<EmotionLabel>().unwrap(), EmotionLabel::Joy);
        assert!("Joy!".parse::<EmotionLabel>().is_err());
    }

    #[test]
    fn gold_emotion_by_overlap() {
        let mut p = parse(ONE).poems.remove(0);
        p.gold_segments = Some(vec![
            GoldSegment { start: 0, end: 1, emotion: EmotionLabel::Fear },
            GoldSegment { start: 1, end: 2, emotion: EmotionLabel::Joy },
        ]);
        assert_eq!(p.gold_emotion_for(0, 2), Some(EmotionLabel::Fear));
        assert_eq!(p.gold_emotion_for(1, 2), Some(EmotionLabel::Joy));
    }

    fn arb_line() -> impl Strategy<Value = String> {
        "[a-zA-Z,.'!? ]{0,20}[a-z]".prop_map(|s| normalize_text(&s))
    }

    fn arb_poem() -> impl Strategy<Value = Poem> {
        (
            "[a-z]{1,8}",
            "[A-Z][a-z]{0,8}",
            prop::collection::vec(arb_line(), 1..8),
            prop::collection::vec(any::<bool>(), 8),
            prop::option::of(prop::sample::select(EmotionLabel::ALL.to_vec())),
        )
            .prop_map(|(title, poet, lines, breaks, emotion)| {
                let stanza_breaks = (1..lines.len()).filter(|&i| breaks[i]).collect();
                let gold_segments = emotion.map(|emotion| {
                    vec![GoldSegment { start: 0, end: lines.len(), emotion }]
                });
                Poem {
                    id: assign_id(&title, &poet),
                    title,
                    poet,
                    theme: "ode".into(),
                    protagonist: String::new(),
                    lines,
                    stanza_breaks,
                    gold_segments,
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(poems in prop::collection::vec(arb_poem(), 0..6)) {
            // Drop records that would collide on id so the list is valid.
            let mut seen = HashSet::new();
            let poems: Vec<Poem> = poems.into_iter().filter(|p| seen.insert(p.id.clone())).collect();
            let mut buf = Vec::new();
            write_corpus(&mut buf, &poems).unwrap();
            let parsed = parse_corpus(&buf[..]).unwrap();
            prop_assert!(parsed.errors.is_empty());
            prop_assert_eq!(parsed.poems, poems);
        }

        #[test]
        fn parse_output_has_no_parse_level_issues(
            lines in prop::collection::vec("[ a-z<>/\t]{0,12}", 0..6),
            title in "[ a-z<>]{0,8}",
        ) {
            let record = serde_json::json!({"title": title, "poet": "x", "theme": "t", "lines": lines});
            let parsed = parse_corpus(record.to_string().as_bytes()).unwrap();
            for poem in &parsed.poems {
                let report = validate_poem(poem);
                prop_assert!(report.issues.iter().all(|i| !i.code.is_parse_level()), "{:?}", report);
            }
        }
    }
}
