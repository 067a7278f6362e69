use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{EmotionClassifier, EmotionScore, Entity, EntityLabel, EntityTagger};
use crate::corpus::EmotionLabel;
use crate::provider::{HttpJsonClient, ProviderError, RetryPolicy, Transport};

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Case-insensitive, word-aligned lookup of known names.
#[derive(Debug, Clone, Default)]
pub struct GazetteerTagger {
    entries: Vec<(Vec<String>, Entity)>,
}

impl GazetteerTagger {
    pub fn new(names: HashMap<String, EntityLabel>) -> Self {
        let mut entries: Vec<(Vec<String>, Entity)> = names
            .into_iter()
            .map(|(surface, label)| (words(&surface), Entity::new(surface, label)))
            .filter(|(w, _)| !w.is_empty())
            .collect();
        entries.sort_by(|a, b| a.1.cmp(&b.1));
        GazetteerTagger { entries }
    }

    /// Reads a JSON object mapping surface forms to labels.
    pub fn from_json_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let names: HashMap<String, EntityLabel> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(names))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl EntityTagger for GazetteerTagger {
    fn descriptor(&self) -> String {
        format!("gazetteer:{}", self.entries.len())
    }

    fn tag(&self, line: &str) -> Result<Vec<Entity>, ProviderError> {
        let toks = words(line);
        Ok(self
            .entries
            .iter()
            .filter(|(pattern, _)| toks.windows(pattern.len()).any(|w| w == pattern.as_slice()))
            .map(|(_, e)| e.clone())
            .collect())
    }
}

const BUILTIN_LEXICON: &[(EmotionLabel, &[&str])] = &[
    (EmotionLabel::Anger, &[
        "anger", "angry", "rage", "raging", "fury", "furious", "wrath", "hate", "hatred", "scorn", "burn", "burning",
        "storm", "curse", "cursed", "vengeance", "fierce", "roar",
    ]),
    (EmotionLabel::Disgust, &[
        "disgust", "disgusted", "vile", "foul", "rot", "rotten", "filth", "filthy", "loathe", "loathing", "sneer",
        "stench", "decay", "putrid", "sick",
    ]),
    (EmotionLabel::Fear, &[
        "fear", "afraid", "dread", "terror", "terrible", "fright", "frightened", "tremble", "trembling", "horror",
        "shadow", "shadows", "dark", "darkness", "ghost", "panic", "scared", "haunted",
    ]),
    (EmotionLabel::Joy, &[
        "joy", "joyful", "happy", "happiness", "delight", "glad", "gladness", "laugh", "laughter", "smile", "bliss",
        "merry", "cheer", "sing", "singing", "dance", "dancing", "bright", "love", "sweet", "golden", "spring",
    ]),
    (EmotionLabel::Sadness, &[
        "sad", "sadness", "sorrow", "grief", "grieve", "weep", "weeping", "tears", "tear", "mourn", "mourning",
        "lonely", "alone", "lost", "despair", "die", "died", "death", "dead", "grave", "cold", "farewell", "woe",
    ]),
    (EmotionLabel::Surprise, &[
        "surprise", "surprised", "sudden", "suddenly", "wonder", "amazed", "astonished", "behold", "startled",
        "marvel", "lo", "gasp",
    ]),
];

pub fn builtin_emotion_lexicon() -> HashMap<String, EmotionLabel> {
    BUILTIN_LEXICON
        .iter()
        .flat_map(|(label, ws)| ws.iter().map(move |w| (w.to_string(), *label)))
        .collect()
}

/// Keyword-count emotion classifier. The label with the most hits wins,
/// ties going to the label hit first in the line; confidence is the winner's
/// share of all hits. A line with no hits is `neutral` at confidence 1.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    lexicon: HashMap<String, EmotionLabel>,
}

impl LexiconClassifier {
    pub fn new(lexicon: HashMap<String, EmotionLabel>) -> Self {
        let lexicon = lexicon.into_iter().map(|(w, l)| (w.to_lowercase(), l)).collect();
        LexiconClassifier { lexicon }
    }

    pub fn builtin() -> Self {
        Self::new(builtin_emotion_lexicon())
    }

    /// Reads a JSON object mapping each emotion label to a list of keywords.
    pub fn from_json_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let by_label: BTreeMap<EmotionLabel, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(
            by_label
                .into_iter()
                .flat_map(|(l, ws)| ws.into_iter().map(move |w| (w, l)))
                .collect(),
        ))
    }
}

impl EmotionClassifier for LexiconClassifier {
    fn descriptor(&self) -> String {
        format!("lexicon:{}", self.lexicon.len())
    }

    fn classify(&self, line: &str) -> Result<EmotionScore, ProviderError> {
        let mut counts: Vec<(EmotionLabel, usize)> = Vec::new();
        for w in words(line) {
            if let Some(&label) = self.lexicon.get(&w) {
                match counts.iter_mut().find(|c| c.0 == label) {
                    Some(c) => c.1 += 1,
                    None => counts.push((label, 1)),
                }
            }
        }
        let total: usize = counts.iter().map(|c| c.1).sum();
        if total == 0 {
            return Ok(EmotionScore { label: EmotionLabel::Neutral, confidence: 1.0 });
        }
        // max_by_key keeps the last maximum, so scan in reverse to prefer the earliest.
        let (label, n) = counts.iter().rev().max_by_key(|c| c.1).copied().unwrap();
        Ok(EmotionScore { label, confidence: n as f64 / total as f64 })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateResponse {
    pub entities: Vec<Vec<Entity>>,
    pub emotions: Vec<EmotionScore>,
}

/// Remote annotator speaking the `/annotate` protocol. Serves as both tagger
/// and classifier; each line is requested once and the answer memoized.
/// The client itself does not retry, since `annotate_lines` already does.
pub struct HttpAnnotator {
    client: HttpJsonClient,
    memo: Mutex<HashMap<String, (Vec<Entity>, EmotionScore)>>,
}

impl HttpAnnotator {
    pub fn new(endpoint: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        HttpAnnotator {
            client: HttpJsonClient::new(endpoint, transport, RetryPolicy::no_backoff(0)),
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_token_env(mut self, var: impl Into<String>) -> Self {
        self.client = self.client.with_token_env(var);
        self
    }

    /// One request for a batch of lines.
    pub fn annotate_batch(&self, lines: &[String]) -> Result<AnnotateResponse, ProviderError> {
        let (resp, _): (AnnotateResponse, _) =
            self.client.post("annotate", &AnnotateRequest { lines: lines.to_vec() })?;
        if resp.entities.len() != lines.len() || resp.emotions.len() != lines.len() {
            return Err(ProviderError::InvalidResponse(format!(
                "expected {} annotations, got {} entity lists and {} emotions",
                lines.len(),
                resp.entities.len(),
                resp.emotions.len()
            )));
        }
        if let Some(e) = resp.emotions.iter().find(|e| !(0.0..=1.0).contains(&e.confidence)) {
            return Err(ProviderError::InvalidResponse(format!("confidence {} outside [0, 1]", e.confidence)));
        }
        Ok(resp)
    }

    fn line(&self, line: &str) -> Result<(Vec<Entity>, EmotionScore), ProviderError> {
        if let Some(hit) = self.memo.lock().unwrap().get(line) {
            return Ok(hit.clone());
        }
        let mut resp = self.annotate_batch(&[line.to_string()])?;
        let value = (resp.entities.remove(0), resp.emotions.remove(0));
        self.memo.lock().unwrap().insert(line.to_string(), value.clone());
        Ok(value)
    }
}

impl EntityTagger for HttpAnnotator {
    fn descriptor(&self) -> String {
        format!("http:{}", self.client.base_url())
    }

    fn tag(&self, line: &str) -> Result<Vec<Entity>, ProviderError> {
        self.line(line).map(|v| v.0)
    }
}

impl EmotionClassifier for HttpAnnotator {
    fn descriptor(&self) -> String {
        format!("http:{}", self.client.base_url())
    }

    fn classify(&self, line: &str) -> Result<EmotionScore, ProviderError> {
        self.line(line).map(|v| v.1)
    }
}
