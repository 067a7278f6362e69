//! Deterministic stand-in for a diffusion backbone.
//!
//! Each description becomes an 8×8 grid of 16-channel tokens built from
//! seeded per-word noise, the whole batch passes through two residual
//! rounds of consistent self-attention, and a linear channel-to-RGB readout
//! is upsampled to the requested size. Everything is a pure function of the
//! prompts, seed, sampling policy and size.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GenerationError, GenerationRequest, ImageArtifact, ImageBackend, PromptEntry, SegmentFailure, SequenceOutcome};
use crate::attention::{consistent_self_attention, FeatureBatch, ProjectionWeights, SamplePool, SamplingPolicy};
use crate::util::derive_seed;

pub const TOY_GRID: usize = 8;
pub const TOY_TOKENS: usize = TOY_GRID * TOY_GRID;
pub const TOY_CHANNELS: usize = 16;
pub const TOY_LAYERS: usize = 2;
pub(super) const TOY_MODEL: &str = "toy-csa";

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token grid for one description: the sum of every word's seeded uniform
/// `[-1, 1)` noise field, scaled by `1 / √(word count)`.
pub fn toy_token_features(text: &str, seed: u64) -> Result<Array2<f64>, GenerationError> {
    let words = words(text);
    if words.is_empty() {
        return Err(GenerationError::InvalidRequest(format!("description {text:?} has no words")));
    }
    let mut grid = Array2::<f64>::zeros((TOY_TOKENS, TOY_CHANNELS));
    for word in &words {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"toy-token", &seed.to_le_bytes(), word.as_bytes()]));
        for v in grid.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }
    grid /= (words.len() as f64).sqrt();
    Ok(grid)
}

pub(crate) fn layer_weights(seed: u64, layer: usize) -> ProjectionWeights {
    ProjectionWeights::seeded(
        TOY_CHANNELS,
        derive_seed(&[b"toy-weights", &seed.to_le_bytes(), &(layer as u64).to_le_bytes()]),
        false,
    )
}

pub(crate) fn layer_policy(policy: &SamplingPolicy, layer: usize) -> SamplingPolicy {
    SamplingPolicy {
        seed: derive_seed(&[b"toy-sample", &policy.seed.to_le_bytes(), &(layer as u64).to_le_bytes()]),
        ..*policy
    }
}

pub(crate) fn readout_weights(seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"toy-readout", &seed.to_le_bytes()]));
    let bound = (3.0 / TOY_CHANNELS as f64).sqrt();
    Array2::from_shape_fn((TOY_CHANNELS, 3), |_| rng.random_range(-bound..bound))
}

fn render(features: &Array2<f64>, readout: &Array2<f64>, width: u32, height: u32) -> RgbImage {
    let colors = features.dot(readout).mapv(|v| (255.0 / (1.0 + (-v).exp())).round() as u8);
    RgbImage::from_fn(width, height, |x, y| {
        let row = y as usize * TOY_GRID / height as usize;
        let col = x as usize * TOY_GRID / width as usize;
        let t = row * TOY_GRID + col;
        Rgb([colors[[t, 0]], colors[[t, 1]], colors[[t, 2]]])
    })
}

/// Feature maps and images for `prompts`, in order.
pub fn toy_generate(
    prompts: &[PromptEntry],
    seed: u64,
    policy: &SamplingPolicy,
    width: u32,
    height: u32,
) -> Result<Vec<ImageArtifact>, GenerationError> {
    if prompts.is_empty() {
        return Err(GenerationError::InvalidRequest("no prompts".into()));
    }
    if width == 0 || height == 0 {
        return Err(GenerationError::InvalidRequest(format!("size {width}x{height}")));
    }
    let grids = prompts
        .iter()
        .map(|p| toy_token_features(&p.text, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut batch = FeatureBatch::from_images(&grids)?;
    for layer in 0..TOY_LAYERS {
        let out = consistent_self_attention(&batch, &layer_weights(seed, layer), &layer_policy(policy, layer))?;
        batch = FeatureBatch::new(batch.into_inner() + out.data)?;
    }
    let readout = readout_weights(seed);
    let consistency = if policy.rate > 0.0 { "on" } else { "off" };
    Ok(prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let features = batch.image(i).to_owned();
            let image = render(&features, &readout, width, height);
            let backend_meta = BTreeMap::from([
                ("backend".to_string(), "toy".to_string()),
                ("model".to_string(), TOY_MODEL.to_string()),
                ("layers".to_string(), TOY_LAYERS.to_string()),
                ("consistency".to_string(), consistency.to_string()),
                ("sampling_rate".to_string(), policy.rate.to_string()),
            ]);
            ImageArtifact {
                segment_id: p.segment_id.clone(),
                image,
                feature_map: Some(features),
                description: p.text.clone(),
                backend_meta,
            }
        })
        .collect())
}

/// Built-in backend. With consistency on, each image samples reference
/// tokens from the images before it only, so earlier images never depend on
/// later prompts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyBackend {
    pub sampling_rate: f64,
}

impl Default for ToyBackend {
    fn default() -> Self {
        ToyBackend { sampling_rate: SamplingPolicy::default().rate }
    }
}

impl ToyBackend {
    pub fn policy_for(&self, req: &GenerationRequest) -> SamplingPolicy {
        if req.consistency {
            SamplingPolicy { rate: self.sampling_rate, seed: req.seed, pool: SamplePool::PriorImagesOnly }
        } else {
            SamplingPolicy { seed: req.seed, ..SamplingPolicy::disabled() }
        }
    }
}

impl ImageBackend for ToyBackend {
    fn model_name(&self) -> String {
        TOY_MODEL.to_string()
    }

    fn generate(&self, req: &GenerationRequest) -> SequenceOutcome {
        let prompts: Vec<PromptEntry> = (0..req.prompts.len())
            .map(|k| PromptEntry { segment_id: req.prompts[k].segment_id.clone(), text: req.rendered_prompt(k) })
            .collect();
        match toy_generate(&prompts, req.seed, &self.policy_for(req), req.width, req.height) {
            Ok(artifacts) => SequenceOutcome { artifacts, failure: None },
            Err(error) => SequenceOutcome {
                artifacts: Vec::new(),
                failure: Some(SegmentFailure { index: 0, segment_id: req.prompts[0].segment_id.clone(), error }),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompts(texts: &[&str]) -> Vec<PromptEntry> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| PromptEntry { segment_id: format!("s{i}"), text: t.to_string() })
            .collect()
    }

    fn on(seed: u64) -> SamplingPolicy {
        SamplingPolicy { rate: 0.5, seed, pool: SamplePool::PriorImagesOnly }
    }

    #[test]
    fn empty_description_rejected() {
        let err = toy_generate(&prompts(&[""]), 1, &on(1), 8, 8).unwrap_err();
        assert!(matches!(err, GenerationError::InvalidRequest(_)));
    }

    #[test]
    fn output_has_requested_size_and_features() {
        let out = toy_generate(&prompts(&["a red fox"]), 1, &on(1), 13, 7).unwrap();
        assert_eq!(out[0].image.dimensions(), (13, 7));
        assert_eq!(out[0].feature_map.as_ref().unwrap().dim(), (TOY_TOKENS, TOY_CHANNELS));
    }

    #[test]
    fn deterministic() {
        let p = prompts(&["the lone king", "sand stretches far away"]);
        let a = toy_generate(&p, 7, &on(7), 16, 16).unwrap();
        let b = toy_generate(&p, 7, &on(7), 16, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_descriptions_all_others_pool() {
        let p = prompts(&["a sailor at dawn"; 3]);
        let policy = SamplingPolicy { rate: 0.5, seed: 2, pool: SamplePool::AllOtherImages };
        let out = toy_generate(&p, 2, &policy, 8, 8).unwrap();
        assert_eq!(out[0].feature_map, out[1].feature_map);
        assert_eq!(out[1].feature_map, out[2].feature_map);
    }

    #[test]
    fn prefix_stability_with_prior_pool() {
        let full = toy_generate(&prompts(&["moonlit shore", "a child runs", "storm clouds gather"]), 3, &on(3), 8, 8).unwrap();
        let short = toy_generate(&prompts(&["moonlit shore", "a child runs"]), 3, &on(3), 8, 8).unwrap();
        assert_eq!(full[..2], short[..]);
    }

    #[test]
    fn word_order_and_case_do_not_matter() {
        let a = toy_token_features("Red fox", 1).unwrap();
        let b = toy_token_features("fox, red!", 1).unwrap();
        assert_eq!(a, b);
    }
}
