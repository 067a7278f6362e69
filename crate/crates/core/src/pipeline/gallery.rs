use std::fmt::Write as _;

use super::run::{PoemResult, PoemStatus};
use crate::evaluation::Approach;

pub const GALLERY_FILE: &str = "gallery.html";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Static page with each poem's images next to the prompts that made them.
pub fn render_gallery(approach: Approach, poems: &[PoemResult]) -> String {
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Gallery</title>\n");
    h.push_str("<style>body{font-family:sans-serif;margin:2em}figure{display:inline-block;vertical-align:top;width:220px;margin:0 1em 1em 0}img{width:200px;image-rendering:pixelated}figcaption{white-space:pre-wrap;font-size:0.8em}.failed{color:#a00}</style>\n");
    let _ = writeln!(h, "</head><body>\n<h1>Gallery ({})</h1>", escape(approach.as_str()));
    for p in poems {
        let _ = writeln!(h, "<section>\n<h2>{}</h2>", escape(&p.poem_id));
        if p.status == PoemStatus::Failed {
            let _ = writeln!(h, "<p class=\"failed\">{}</p>", escape(p.error.as_deref().unwrap_or("failed")));
        }
        for (k, prompt) in p.prompts.iter().enumerate().take(p.images) {
            let _ = writeln!(
                h,
                "<figure><img src=\"{}/segment_{k:02}.png\" alt=\"{}\"><figcaption>{}</figcaption></figure>",
                escape(&p.dir),
                escape(&prompt.segment_id),
                escape(&prompt.text)
            );
        }
        h.push_str("</section>\n");
    }
    h.push_str("</body></html>\n");
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::PromptEntry;

    #[test]
    fn prompts_are_escaped() {
        let p = PoemResult {
            poem_id: "p<1>".into(),
            status: PoemStatus::Completed,
            error: None,
            dir: "poems/p".into(),
            sequence: None,
            report: None,
            segments: 1,
            images: 1,
            prompts: vec![PromptEntry { segment_id: "p#0".into(), text: "a & b".into() }],
            elapsed_ms: 0,
        };
        let html = render_gallery(Approach::Poemtale, &[p]);
        assert!(html.contains("p&lt;1&gt;") && html.contains("a &amp; b") && html.contains("segment_00.png"));
    }
}
