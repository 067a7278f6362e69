//! On-disk form of a generated sequence: one PNG per segment plus a
//! `sequence.json` manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{decode_png, GenerationError, ImageArtifact};

pub const SEQUENCE_FILE: &str = "sequence.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub segment_id: String,
    pub file: String,
    pub description: String,
    pub meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub poem_id: String,
    pub artifacts: Vec<SequenceEntry>,
}

/// Writes `segment_NN.png` files (and `segment_NN.features.npy` for toy
/// artifacts) plus the manifest into `dir`. File names are relative to `dir`.
pub fn write_sequence(dir: &Path, poem_id: &str, artifacts: &[ImageArtifact]) -> std::io::Result<SequenceManifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(artifacts.len());
    for (k, a) in artifacts.iter().enumerate() {
        let file = format!("segment_{k:02}.png");
        std::fs::write(dir.join(&file), a.png_bytes())?;
        let features = match &a.feature_map {
            Some(f) => {
                let name = format!("segment_{k:02}.features.npy");
                crate::attention::write_npy(&dir.join(&name), f)?;
                Some(name)
            }
            None => None,
        };
        entries.push(SequenceEntry {
            segment_id: a.segment_id.clone(),
            file,
            description: a.description.clone(),
            meta: a.backend_meta.clone(),
            features,
        });
    }
    let manifest = SequenceManifest { poem_id: poem_id.to_string(), artifacts: entries };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(SEQUENCE_FILE), text + "\n")?;
    Ok(manifest)
}

/// Loads a sequence written by [`write_sequence`].
pub fn read_sequence(manifest_path: &Path) -> Result<(SequenceManifest, Vec<ImageArtifact>), GenerationError> {
    let io = |e: std::io::Error| GenerationError::Decode(format!("{}: {e}", manifest_path.display()));
    let text = std::fs::read_to_string(manifest_path).map_err(io)?;
    let manifest: SequenceManifest =
        serde_json::from_str(&text).map_err(|e| GenerationError::Decode(e.to_string()))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut artifacts = Vec::with_capacity(manifest.artifacts.len());
    for entry in &manifest.artifacts {
        let bytes = std::fs::read(dir.join(&entry.file)).map_err(io)?;
        let feature_map = match &entry.features {
            Some(name) => Some(
                ndarray_npy::read_npy(dir.join(name)).map_err(|e| GenerationError::Decode(e.to_string()))?,
            ),
            None => None,
        };
        artifacts.push(ImageArtifact {
            segment_id: entry.segment_id.clone(),
            image: decode_png(&bytes)?,
            feature_map,
            description: entry.description.clone(),
            backend_meta: entry.meta.clone(),
        });
    }
    Ok((manifest, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::SamplingPolicy;
    use crate::generation::{toy_generate, PromptEntry};

    #[test]
    fn write_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = vec![
            PromptEntry { segment_id: "a#0".into(), text: "grey sea".into() },
            PromptEntry { segment_id: "a#1".into(), text: "long black land".into() },
        ];
        let artifacts = toy_generate(&prompts, 4, &SamplingPolicy::default(), 10, 6).unwrap();
        let manifest = write_sequence(dir.path(), "a", &artifacts).unwrap();
        assert_eq!(manifest.artifacts[1].file, "segment_01.png");
        let (read_manifest, read) = read_sequence(&dir.path().join(SEQUENCE_FILE)).unwrap();
        assert_eq!(read_manifest, manifest);
        assert_eq!(read, artifacts);
    }
}
