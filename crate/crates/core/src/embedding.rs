//! Text and image embedding providers.
//!
//! The deterministic stubs stand in for CLIP-family models in tests and
//! offline runs. [`HashEmbedder`] maps text to 64 dimensions by signed
//! feature hashing of character trigrams (a sparse seeded random projection)
//! followed by L2 normalization; toy images embed through their generating
//! description, other images through a coarse colour layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::generation::ImageArtifact;
use crate::provider::{HttpJsonClient, ProviderError, RetryPolicy, Transport};
use crate::util::derive_seed;

pub trait TextEmbedder: Send + Sync {
    /// Stable identifier used in cache keys.
    fn descriptor(&self) -> String;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

pub trait ImageEmbedder: Send + Sync {
    fn descriptor(&self) -> String;
    fn embed_image(&self, image: &ImageArtifact) -> Result<Vec<f64>, ProviderError>;
}

/// Embedder whose text and image vectors live in one space.
pub trait JointEmbedder: TextEmbedder + ImageEmbedder {
    fn joint_space(&self) -> bool {
        true
    }
}

pub const STUB_DIM: usize = 64;

fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Seeded character-trigram hashing embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { seed: 0x5eed }
    }
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        HashEmbedder { seed }
    }

    /// Lowercased alphanumeric words joined by single spaces and padded with
    /// a space on each side; trigrams are taken over this string.
    pub fn canonical(text: &str) -> String {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        format!(" {} ", words.join(" "))
    }

    pub fn trigrams(text: &str) -> Vec<String> {
        let chars: Vec<char> = Self::canonical(text).chars().collect();
        chars.windows(3).map(|w| w.iter().collect()).collect()
    }

    /// Output dimension and sign for one trigram.
    pub fn bucket(&self, trigram: &str) -> (usize, f64) {
        let h = derive_seed(&[b"hash-embed", &self.seed.to_le_bytes(), trigram.as_bytes()]);
        let dim = (h % STUB_DIM as u64) as usize;
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        (dim, sign)
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; STUB_DIM];
        for g in Self::trigrams(text) {
            let (dim, sign) = self.bucket(&g);
            v[dim] += sign;
        }
        l2_normalize(v)
    }

    /// 4×4 grid of mean colours, each channel centred, hashed into the same
    /// 64 dimensions.
    fn embed_pixels(&self, image: &image::RgbImage) -> Vec<f64> {
        let (w, h) = image.dimensions();
        let mut v = vec![0.0; STUB_DIM];
        for gy in 0..4u32 {
            for gx in 0..4u32 {
                let (x0, x1) = (gx * w / 4, ((gx + 1) * w / 4).max(gx * w / 4 + 1).min(w));
                let (y0, y1) = (gy * h / 4, ((gy + 1) * h / 4).max(gy * h / 4 + 1).min(h));
                let mut sum = [0.0; 3];
                let mut count = 0.0_f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.get_pixel(x, y);
                        for c in 0..3 {
                            sum[c] += p[c] as f64;
                        }
                        count += 1.0;
                    }
                }
                for (c, s) in sum.iter().enumerate() {
                    let key = format!("px:{gx}:{gy}:{c}");
                    let (dim, sign) = self.bucket(&key);
                    v[dim] += sign * (s / count.max(1.0) / 255.0 - 0.5);
                }
            }
        }
        l2_normalize(v)
    }
}

impl TextEmbedder for HashEmbedder {
    fn descriptor(&self) -> String {
        format!("hash-trigram-{STUB_DIM}:{}", self.seed)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.embed(text))
    }
}

impl ImageEmbedder for HashEmbedder {
    fn descriptor(&self) -> String {
        TextEmbedder::descriptor(self)
    }

    fn embed_image(&self, image: &ImageArtifact) -> Result<Vec<f64>, ProviderError> {
        if image.description.trim().is_empty() {
            Ok(self.embed_pixels(&image.image))
        } else {
            Ok(self.embed(&image.description))
        }
    }
}

impl JointEmbedder for HashEmbedder {}

/// Word-count embedder, insensitive to word order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BagOfWordsEmbedder {
    pub seed: u64,
}

impl TextEmbedder for BagOfWordsEmbedder {
    fn descriptor(&self) -> String {
        format!("bag-of-words-{STUB_DIM}:{}", self.seed)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut v = vec![0.0; STUB_DIM];
        for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let h = derive_seed(&[b"bow", &self.seed.to_le_bytes(), word.to_lowercase().as_bytes()]);
            v[(h % STUB_DIM as u64) as usize] += if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        }
        Ok(l2_normalize(v))
    }
}

/// Images embed through their description; undescribed images fall back to
/// the colour layout of [`HashEmbedder`].
impl ImageEmbedder for BagOfWordsEmbedder {
    fn descriptor(&self) -> String {
        TextEmbedder::descriptor(self)
    }

    fn embed_image(&self, image: &ImageArtifact) -> Result<Vec<f64>, ProviderError> {
        if image.description.trim().is_empty() {
            HashEmbedder::new(self.seed).embed_image(image)
        } else {
            self.embed_text(&image.description)
        }
    }
}

impl JointEmbedder for BagOfWordsEmbedder {}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedTextRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedImageRequest {
    image_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VectorResponse {
    pub vector: Vec<f64>,
}

/// Remote embedder: `POST /embed_text {text}` and `POST /embed_image
/// {image_b64}`, both answering `{vector}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: HttpJsonClient,
    joint: bool,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, transport: Arc<dyn Transport>, retry: RetryPolicy, joint: bool) -> Self {
        HttpEmbedder { client: HttpJsonClient::new(endpoint, transport, retry), joint }
    }

    fn check(vector: Vec<f64>) -> Result<Vec<f64>, ProviderError> {
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidResponse("embedding vector is empty or non-finite".into()));
        }
        Ok(vector)
    }
}

impl TextEmbedder for HttpEmbedder {
    fn descriptor(&self) -> String {
        format!("http:{}", self.client.base_url())
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let (resp, _): (VectorResponse, _) = self.client.post("embed_text", &EmbedTextRequest { text })?;
        Self::check(resp.vector)
    }
}

impl ImageEmbedder for HttpEmbedder {
    fn descriptor(&self) -> String {
        TextEmbedder::descriptor(self)
    }

    fn embed_image(&self, image: &ImageArtifact) -> Result<Vec<f64>, ProviderError> {
        let body = EmbedImageRequest { image_b64: image.png_base64() };
        let (resp, _): (VectorResponse, _) = self.client.post("embed_image", &body)?;
        Self::check(resp.vector)
    }
}

impl JointEmbedder for HttpEmbedder {
    fn joint_space(&self) -> bool {
        self.joint
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::cosine;

    #[test]
    fn unit_norm_and_deterministic() {
        let e = HashEmbedder::default();
        let v = e.embed("Look on my works, ye Mighty");
        assert_eq!(v.len(), STUB_DIM);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(v, e.embed("Look on my works, ye Mighty"));
    }

    #[test]
    fn punctuation_and_case_are_ignored() {
        let e = HashEmbedder::default();
        assert_eq!(e.embed("Hello, World!"), e.embed("hello world"));
    }

    #[test]
    fn related_text_scores_higher_than_unrelated() {
        let e = HashEmbedder::default();
        let a = e.embed("the lone and level sands stretch far away");
        let b = e.embed("level sands stretch away, lone and far");
        let c = e.embed("a bright kitchen full of copper pots");
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }

    #[test]
    fn bag_of_words_is_order_invariant() {
        let e = BagOfWordsEmbedder::default();
        assert_eq!(e.embed_text("cold hard ground").unwrap(), e.embed_text("ground hard cold").unwrap());
    }
}
