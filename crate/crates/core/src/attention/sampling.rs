use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttentionError, FeatureBatch, SamplePool, SamplingPolicy};

/// Reference tokens drawn for one image: the same token `positions` are
/// taken from every source image, sources in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledTokens {
    pub sources: Vec<usize>,
    pub positions: Vec<usize>,
}

impl SampledTokens {
    pub fn len(&self) -> usize {
        self.sources.len() * self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(image, token)` pairs in concatenation order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sources
            .iter()
            .flat_map(move |&j| self.positions.iter().map(move |&t| (j, t)))
    }

    /// Gathers the sampled token vectors as a `len × C` matrix.
    pub fn gather(&self, batch: &FeatureBatch) -> Array2<f64> {
        let c = batch.channels();
        let mut out = Array2::zeros((self.len(), c));
        for (row, (j, t)) in self.indices().enumerate() {
            out.row_mut(row).assign(&batch.image(j).row(t));
        }
        out
    }
}

/// Tokens taken from each source image: `floor(rate * N)`.
pub fn sample_count(rate: f64, tokens: usize) -> usize {
    ((rate * tokens as f64).floor() as usize).min(tokens)
}

/// Draws the reference tokens for image `i`.
///
/// Positions are `floor(rate * N)` distinct token indices drawn uniformly
/// without replacement from a ChaCha8 stream seeded with `policy.seed`, and
/// sorted. The same positions are read from every eligible source image, so
/// images with identical features receive identical reference sets. Image
/// `i` itself is never a source.
pub fn rand_sample(batch: &FeatureBatch, i: usize, policy: &SamplingPolicy) -> Result<SampledTokens, AttentionError> {
    policy.validate()?;
    let b = batch.batch();
    if i >= b {
        return Err(AttentionError::IndexOutOfRange { index: i, batch: b });
    }
    let n = batch.tokens();
    let k = sample_count(policy.rate, n);
    let sources: Vec<usize> = match policy.pool {
        SamplePool::AllOtherImages => (0..b).filter(|&j| j != i).collect(),
        SamplePool::PriorImagesOnly => (0..i).collect(),
    };
    if k == 0 || sources.is_empty() {
        return Ok(SampledTokens { sources: Vec::new(), positions: Vec::new() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut positions = rand::seq::index::sample(&mut rng, n, k).into_vec();
    positions.sort_unstable();
    Ok(SampledTokens { sources, positions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn batch(b: usize, n: usize, c: usize) -> FeatureBatch {
        FeatureBatch::new(Array3::from_shape_fn((b, n, c), |(i, j, k)| (i * 100 + j * 10 + k) as f64)).unwrap()
    }

    #[test]
    fn rate_zero_is_empty() {
        let s = rand_sample(&batch(3, 4, 2), 0, &SamplingPolicy::disabled()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn single_image_is_empty() {
        let p = SamplingPolicy { rate: 1.0, ..Default::default() };
        assert!(rand_sample(&batch(1, 4, 2), 0, &p).unwrap().is_empty());
    }

    #[test]
    fn never_samples_self() {
        let p = SamplingPolicy { rate: 1.0, seed: 3, pool: SamplePool::AllOtherImages };
        let s = rand_sample(&batch(4, 4, 2), 2, &p).unwrap();
        assert_eq!(s.sources, vec![0, 1, 3]);
        assert_eq!(s.positions, vec![0, 1, 2, 3]);
    }

    #[test]
    fn prior_pool() {
        let p = SamplingPolicy { rate: 0.5, seed: 3, pool: SamplePool::PriorImagesOnly };
        let b = batch(3, 4, 2);
        assert!(rand_sample(&b, 0, &p).unwrap().is_empty());
        assert_eq!(rand_sample(&b, 2, &p).unwrap().sources, vec![0, 1]);
    }

    #[test]
    fn out_of_range_index() {
        let err = rand_sample(&batch(2, 2, 2), 2, &SamplingPolicy::default()).unwrap_err();
        assert_eq!(err, AttentionError::IndexOutOfRange { index: 2, batch: 2 });
    }

    #[test]
    fn seeded_draw_matches_a_direct_rerun() {
        // B=3, N=4, rate=0.5, seed=17
        let p = SamplingPolicy { rate: 0.5, seed: 17, pool: SamplePool::AllOtherImages };
        let b = batch(3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut expected = rand::seq::index::sample(&mut rng, 4, 2).into_vec();
        expected.sort_unstable();
        // Frozen from the first run; guards against RNG or algorithm drift.
        assert_eq!(expected, vec![2, 3]);
        for i in 0..3 {
            let s = rand_sample(&b, i, &p).unwrap();
            assert_eq!(s.positions, expected);
            assert_eq!(s.len(), 4);
        }
        assert_eq!(rand_sample(&b, 1, &p).unwrap(), rand_sample(&b, 1, &p).unwrap());
    }

    #[test]
    fn gather_reads_rows_in_order() {
        let b = batch(2, 3, 2);
        let s = SampledTokens { sources: vec![1], positions: vec![0, 2] };
        let g = s.gather(&b);
        assert_eq!(g.row(0).to_vec(), vec![100.0, 101.0]);
        assert_eq!(g.row(1).to_vec(), vec![120.0, 121.0]);
    }

    #[test]
    fn count_floors() {
        assert_eq!(sample_count(0.5, 5), 2);
        assert_eq!(sample_count(1.0, 5), 5);
        assert_eq!(sample_count(0.19, 5), 0);
    }
}
