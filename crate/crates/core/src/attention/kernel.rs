use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use super::{check_finite, rand_sample, AttentionError, AttentionOutput, FeatureBatch, ProjectionWeights, SampledTokens, SamplingPolicy};

/// Per-image diagnostics from [`consistent_self_attention_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAttention {
    pub sampled: SampledTokens,
    /// `N × (N + |S_i|)` row-stochastic attention weights.
    pub weights: Array2<f64>,
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Keys and values for the merged token set: own tokens followed by the
/// sampled ones, projected with the shared weights.
pub fn merged_key_value<'a>(
    own: ArrayView2<'a, f64>,
    sampled: ArrayView2<'a, f64>,
    w: &ProjectionWeights,
) -> (Array2<f64>, Array2<f64>) {
    let merged = if sampled.nrows() == 0 {
        own.to_owned()
    } else {
        concatenate(Axis(0), &[own, sampled]).expect("channel counts agree")
    };
    (merged.dot(&w.key), merged.dot(&w.value))
}

fn attend<'a>(
    own: ArrayView2<'a, f64>,
    sampled: ArrayView2<'a, f64>,
    w: &ProjectionWeights,
) -> (Array2<f64>, Array2<f64>) {
    let c = own.ncols();
    let q = own.dot(&w.query);
    let (k, v) = merged_key_value(own, sampled, w);
    let mut weights = q.dot(&k.t()) / (c as f64).sqrt();
    softmax_rows(&mut weights);
    let mut out = weights.dot(&v);
    if let Some(o) = &w.output {
        out = out.dot(o);
    }
    (out, weights)
}

fn check_image(x: ArrayView2<'_, f64>, w: &ProjectionWeights) -> Result<(), AttentionError> {
    let (n, c) = x.dim();
    if n == 0 || c == 0 {
        return Err(AttentionError::Shape(format!("empty {n}x{c} feature matrix")));
    }
    w.validate(c)?;
    check_finite(x.iter(), "features")
}

/// `softmax(Q Kᵀ / √C) V` within a single `N × C` image, then the optional
/// output projection.
pub fn self_attention(x: ArrayView2<'_, f64>, w: &ProjectionWeights) -> Result<Array2<f64>, AttentionError> {
    self_attention_with_weights(x, w).map(|(out, _)| out)
}

/// [`self_attention`] that also returns the `N × N` attention weights.
pub fn self_attention_with_weights(
    x: ArrayView2<'_, f64>,
    w: &ProjectionWeights,
) -> Result<(Array2<f64>, Array2<f64>), AttentionError> {
    check_image(x, w)?;
    let empty = Array2::<f64>::zeros((0, x.ncols()));
    Ok(attend(x.reborrow(), empty.view(), w))
}

/// Consistent self-attention over a batch: image `i` keeps its own queries
/// and attends over its own tokens plus the reference tokens drawn by
/// [`rand_sample`].
pub fn consistent_self_attention(
    batch: &FeatureBatch,
    w: &ProjectionWeights,
    policy: &SamplingPolicy,
) -> Result<AttentionOutput, AttentionError> {
    consistent_self_attention_traced(batch, w, policy).map(|(out, _)| out)
}

/// [`consistent_self_attention`] plus the sampled tokens and attention
/// weights for every image.
pub fn consistent_self_attention_traced(
    batch: &FeatureBatch,
    w: &ProjectionWeights,
    policy: &SamplingPolicy,
) -> Result<(AttentionOutput, Vec<ImageAttention>), AttentionError> {
    w.validate(batch.channels())?;
    policy.validate()?;
    // Sampling is drawn in image order before any parallel work.
    let samples = (0..batch.batch())
        .map(|i| rand_sample(batch, i, policy))
        .collect::<Result<Vec<_>, _>>()?;

    let per_image: Vec<(Array2<f64>, Array2<f64>)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, sampled)| {
            let refs = sampled.gather(batch);
            attend(batch.image(i).reborrow(), refs.view(), w)
        })
        .collect();

    let (b, n, _) = batch.data().dim();
    let c_out = per_image[0].0.ncols();
    let mut data = Array3::zeros((b, n, c_out));
    let mut traces = Vec::with_capacity(b);
    for (i, ((out, weights), sampled)) in per_image.into_iter().zip(samples).enumerate() {
        data.slice_mut(s![i, .., ..]).assign(&out);
        traces.push(ImageAttention { sampled, weights });
    }
    Ok((AttentionOutput { data }, traces))
}
