//! Text cleanup applied to every title, poet name and poem line.
//!
//! The rules, in order:
//! 1. whitespace characters become plain spaces; other control and
//!    zero-width format characters are dropped;
//! 2. HTML tags and comments are replaced by a space, repeatedly, until none
//!    remain (so `<<br>b>` cannot leave a tag behind);
//! 3. runs of spaces collapse to one and the ends are trimmed.
//!
//! Every step leaves the output stable under a second application, which
//! makes [`normalize_text`] idempotent.

use std::sync::LazyLock;

use regex::Regex;

static TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<!--.*?-->|</?[A-Za-z][^<>]*>").expect("valid tag regex"));

fn is_invisible_format(c: char) -> bool {
    matches!(c, '\u{200B}'..='\u{200D}' | '\u{2060}' | '\u{FEFF}')
}

fn clean_chars(raw: &str) -> String {
    raw.chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() || is_invisible_format(c) {
                None
            } else {
                Some(c)
            }
        })
        .collect()
}

fn strip_tags(mut text: String) -> String {
    while TAG.is_match(&text) {
        text = TAG.replace_all(&text, " ").into_owned();
    }
    text
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes a single piece of text, joining any embedded line breaks with
/// a space.
pub fn normalize_text(raw: &str) -> String {
    collapse(&strip_tags(clean_chars(raw)))
}

/// Line-preserving variant: splits on `\r\n`, `\n` or `\r` first and
/// normalizes each piece. Blank results are kept as empty strings so callers
/// can record stanza breaks.
pub fn normalize_lines(raw: &str) -> Vec<String> {
    raw.split("\r\n")
        .flat_map(|chunk| chunk.split(['\n', '\r']))
        .map(normalize_text)
        .collect()
}

/// True if `text` still contains something that looks like an HTML tag.
pub fn has_html(text: &str) -> bool {
    TAG.is_match(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_tags_and_collapses() {
        assert_eq!(normalize_text("<p>O  wild  west wind</p>"), "O wild west wind");
    }

    #[test]
    fn empty_stays_empty() {
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text(" \t\r\n "), "");
    }

    #[test]
    fn collapsing_and_line_preserving_modes() {
        assert_eq!(normalize_text("a\t\tb\r\nc"), "a b c");
        assert_eq!(normalize_lines("a\t\tb\r\nc"), vec!["a b", "c"]);
    }

    #[test]
    fn break_tag_separates_words() {
        assert_eq!(normalize_text("first<br>second"), "first second");
        assert_eq!(normalize_text("<<br>b>"), "< b>");
    }

    #[test]
    fn comparison_signs_survive() {
        assert_eq!(normalize_text("love < hate > fear"), "love < hate > fear");
    }

    #[test]
    fn control_and_zero_width_removed() {
        assert_eq!(normalize_text("a\u{0007}b\u{200B}c"), "abc");
    }

    #[test]
    fn comments_removed() {
        assert_eq!(normalize_text("x <!-- <b>hidden</b> --> y"), "x y");
    }

    proptest! {
        #[test]
        fn idempotent(raw in any::<String>()) {
            let once = normalize_text(&raw);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn idempotent_on_markup_heavy_input(raw in "[<>a-z/! \t\n-]{0,40}") {
            let once = normalize_text(&raw);
            prop_assert_eq!(normalize_text(&once), once.clone());
            prop_assert!(!has_html(&once));
        }
    }
}
