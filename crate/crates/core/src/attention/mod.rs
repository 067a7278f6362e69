//! Standard and consistent self-attention over batched image-token features.
//!
//! `self_attention` is single-head scaled dot-product attention inside one
//! image. `consistent_self_attention` additionally lets every image attend to
//! tokens sampled from the other images in the batch: the sampled tokens are
//! appended to the image's own tokens before the key/value projections, with
//! the same projection weights, while queries still come from the image
//! alone.

mod kernel;
mod sampling;

use ndarray::{Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::{
    consistent_self_attention, consistent_self_attention_traced, merged_key_value, self_attention,
    self_attention_with_weights, ImageAttention,
};
pub use sampling::{rand_sample, sample_count, SampledTokens};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("sampling rate {0} is outside [0, 1]")]
    InvalidRate(f64),
    #[error("image index {index} out of range for batch of {batch}")]
    IndexOutOfRange { index: usize, batch: usize },
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &'static str) -> Result<(), AttentionError> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AttentionError::NonFinite(what))
    }
}

/// `B × N × C` token features: B images, N tokens each, C channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    data: Array3<f64>,
}

impl FeatureBatch {
    pub fn new(data: Array3<f64>) -> Result<Self, AttentionError> {
        let (b, n, c) = data.dim();
        if b == 0 || n == 0 || c == 0 {
            return Err(AttentionError::Shape(format!("empty dimension in {b}x{n}x{c} batch")));
        }
        check_finite(data.iter(), "feature batch")?;
        Ok(FeatureBatch { data })
    }

    pub fn from_images(images: &[Array2<f64>]) -> Result<Self, AttentionError> {
        let first = images.first().ok_or_else(|| AttentionError::Shape("no images".into()))?;
        let (n, c) = first.dim();
        let mut data = Array3::zeros((images.len(), n, c));
        for (i, img) in images.iter().enumerate() {
            if img.dim() != (n, c) {
                return Err(AttentionError::Shape(format!(
                    "image {i} is {:?}, expected {:?}",
                    img.dim(),
                    (n, c)
                )));
            }
            data.index_axis_mut(ndarray::Axis(0), i).assign(img);
        }
        FeatureBatch::new(data)
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn tokens(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn image(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), i)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }
}

/// Query/key/value projections (`C × C`, applied as `X · W`) and an optional
/// output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Option<Array2<f64>>,
}

impl ProjectionWeights {
    pub fn identity(channels: usize) -> Self {
        let eye = Array2::eye(channels);
        ProjectionWeights { query: eye.clone(), key: eye.clone(), value: eye, output: None }
    }

    /// Uniform entries with variance `1 / C`, drawn from a ChaCha8 stream in
    /// the order query, key, value, then output (when requested), row-major.
    pub fn seeded(channels: usize, seed: u64, with_output: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (3.0 / channels as f64).sqrt();
        let mut draw = || Array2::from_shape_fn((channels, channels), |_| rng.random_range(-bound..bound));
        let query = draw();
        let key = draw();
        let value = draw();
        let output = with_output.then(draw);
        ProjectionWeights { query, key, value, output }
    }

    pub fn channels(&self) -> usize {
        self.query.nrows()
    }

    pub fn validate(&self, channels: usize) -> Result<(), AttentionError> {
        let mats = [("query", Some(&self.query)), ("key", Some(&self.key)), ("value", Some(&self.value)), ("output", self.output.as_ref())];
        for (name, m) in mats {
            let Some(m) = m else { continue };
            if m.dim() != (channels, channels) {
                return Err(AttentionError::Shape(format!(
                    "{name} projection is {:?}, expected {channels}x{channels}",
                    m.dim()
                )));
            }
            check_finite(m.iter(), "projection weights")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplePool {
    /// Every image except the one being updated.
    AllOtherImages,
    /// Only images earlier in the batch; the first image samples nothing.
    PriorImagesOnly,
}

/// How reference tokens are drawn from other images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    /// Fraction of each source image's tokens to sample.
    pub rate: f64,
    pub seed: u64,
    pub pool: SamplePool,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy { rate: 0.5, seed: 0, pool: SamplePool::AllOtherImages }
    }
}

impl SamplingPolicy {
    pub fn disabled() -> Self {
        SamplingPolicy { rate: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if (0.0..=1.0).contains(&self.rate) {
            Ok(())
        } else {
            Err(AttentionError::InvalidRate(self.rate))
        }
    }
}

/// One `N × C` output per input image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub data: Array3<f64>,
}

impl AttentionOutput {
    pub fn image(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), i)
    }
}

/// Writes a float64 array as a little-endian `.npy` file for offline
/// cross-checks.
pub fn write_npy<D: ndarray::Dimension>(
    path: &std::path::Path,
    array: &ndarray::Array<f64, D>,
) -> std::io::Result<()> {
    ndarray_npy::write_npy(path, array).map_err(std::io::Error::other)
}
