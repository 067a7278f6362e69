use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;

pub const POEM: &str = "{poem}";
pub const SEGMENT: &str = "{segment}";
pub const PREVIOUS: &str = "{previous_description}";

const STAGE1_TEMPLATE: &str = "\
You are a visual storytelling expert working from a poem.
Full poem for context:
{poem}

Picture a single vivid, imaginative scene for the excerpt below. Describe what \
the image shows: setting, figures, light, colour and mood. Reply with the \
description only.
Excerpt:
{segment}";

const REFINE_TEMPLATE: &str = "\
You are a visual storytelling expert revising an image description.
Original poem:
{poem}

Excerpt being illustrated:
{segment}

Rewrite the description so the scene carries more of the excerpt's emotion \
and poetic imagery while staying concrete enough to paint. Reply with the \
revised description only.
Current description:
{previous_description}";

/// Prompt templates with `{poem}`, `{segment}` and `{previous_description}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub stage1: String,
    pub refine: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates { stage1: STAGE1_TEMPLATE.to_string(), refine: REFINE_TEMPLATE.to_string() }
    }
}

impl Templates {
    pub fn from_files(stage1: &Path, refine: &Path) -> std::io::Result<Self> {
        Ok(Templates { stage1: std::fs::read_to_string(stage1)?, refine: std::fs::read_to_string(refine)? })
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.stage1.contains(SEGMENT) {
            return Err("stage-1 template lacks {segment}".into());
        }
        if !self.refine.contains(PREVIOUS) {
            return Err("refine template lacks {previous_description}".into());
        }
        if !self.refine.contains(POEM) && !self.refine.contains(SEGMENT) {
            return Err("refine template needs {poem} or {segment}".into());
        }
        Ok(())
    }

    /// Pinned into run metadata and cache keys.
    pub fn hash(&self) -> String {
        sha256_hex(format!("{}\u{1f}{}", self.stage1, self.refine))
    }

    pub fn render_stage1(&self, poem: &str, segment: &str) -> String {
        render(&self.stage1, &[(POEM, poem), (SEGMENT, segment)])
    }

    pub fn render_refine(&self, poem: &str, segment: &str, previous: &str) -> String {
        render(&self.refine, &[(POEM, poem), (SEGMENT, segment), (PREVIOUS, previous)])
    }
}

/// Single left-to-right pass, so placeholder-like text inside a value is
/// never expanded.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        for (name, value) in values {
            if let Some(after) = rest.strip_prefix(name) {
                out.push_str(value);
                rest = after;
                continue 'scan;
            }
        }
        out.push('{');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}
