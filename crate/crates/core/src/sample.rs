//! I.i.d. samples. A sample remembers the fingerprint of the distribution it
//! was drawn from, which lets mock algorithms with declared output laws look
//! up the law for the queried distribution.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;

use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::seed::{stream_rng, TAG_SAMPLE};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sample {
    pub source: Option<u64>,
    pub points: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleRef<'a> {
    pub source: Option<u64>,
    pub points: &'a [u32],
}

impl Sample {
    /// A dataset with no provenance (used by privacy audits).
    pub fn dataset(points: Vec<u32>) -> Self {
        Self { source: None, points }
    }

    pub fn view(&self) -> SampleRef<'_> {
        SampleRef {
            source: self.source,
            points: &self.points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl<'a> SampleRef<'a> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Splits into consecutive blocks of `size` points (the last block may be
    /// short only if the caller passed a mismatched sample).
    pub fn blocks(self, size: usize) -> impl Iterator<Item = SampleRef<'a>> {
        let source = self.source;
        let chunk = size.max(1);
        let n_blocks = self.points.len().checked_div(size).unwrap_or(0);
        self.points
            .chunks(chunk)
            .take(n_blocks)
            .map(move |points| SampleRef { source, points })
    }

    /// Like [`blocks`](Self::blocks) but yields exactly `count` blocks, which
    /// are empty when `size` is zero.
    pub fn blocks_exact(self, size: usize, count: usize) -> Vec<SampleRef<'a>> {
        (0..count)
            .map(|i| SampleRef {
                source: self.source,
                points: &self.points[i * size..(i + 1) * size],
            })
            .collect()
    }

    pub fn slice(self, start: usize, end: usize) -> SampleRef<'a> {
        SampleRef {
            source: self.source,
            points: &self.points[start..end],
        }
    }

    pub fn to_owned(self) -> Sample {
        Sample {
            source: self.source,
            points: self.points.to_vec(),
        }
    }

    /// Deterministic variate in `[0,1)` derived from the sample contents. Any
    /// randomness a mock algorithm needs is attributed to the sample this way.
    pub fn hash_uniform(&self, salt: u64) -> f64 {
        let mut h = DefaultHasher::new();
        salt.hash(&mut h);
        self.source.hash(&mut h);
        self.points.hash(&mut h);
        (h.finish() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<()> {
        if self.points.len() != expected {
            return Err(Error::SampleSize {
                expected,
                got: self.points.len(),
            });
        }
        Ok(())
    }
}

/// Precomputed alias table for repeated draws from one distribution.
#[derive(Debug, Clone)]
pub struct Sampler {
    support: Vec<u32>,
    alias: Option<WeightedAliasIndex<f64>>,
    fingerprint: u64,
}

impl Sampler {
    pub fn new(dist: &FiniteDistribution) -> Self {
        let alias = if dist.len() > 1 {
            Some(WeightedAliasIndex::new(dist.probs().to_vec()).expect("valid distribution weights"))
        } else {
            None
        };
        Self {
            support: dist.support().to_vec(),
            alias,
            fingerprint: dist.fingerprint(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.alias {
            Some(a) => self.support[a.sample(rng)],
            None => self.support[0],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Sample {
        Sample {
            source: Some(self.fingerprint),
            points: (0..n).map(|_| self.draw(rng)).collect(),
        }
    }
}

/// `n` i.i.d. draws from `dist`, reproducible from `(seed, stream)`.
pub fn sample(dist: &FiniteDistribution, n: usize, seed: u64, stream: u64) -> Sample {
    let mut rng = stream_rng(seed, &[TAG_SAMPLE, stream]);
    Sampler::new(dist).sample(n, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_sample() {
        let s = sample(&FiniteDistribution::point(0), 5, 1, 0);
        assert_eq!(s.points, vec![0; 5]);
    }

    #[test]
    fn empty_sample() {
        let s = sample(&FiniteDistribution::uniform(2).unwrap(), 0, 1, 0);
        assert!(s.is_empty());
        assert!(s.source.is_some());
    }

    #[test]
    fn reproducible_per_stream() {
        let d = FiniteDistribution::uniform(10).unwrap();
        assert_eq!(sample(&d, 50, 3, 9), sample(&d, 50, 3, 9));
        assert_ne!(sample(&d, 50, 3, 9), sample(&d, 50, 3, 10));
    }

    #[test]
    fn fair_coin_frequency_within_hoeffding_band() {
        // Hoeffding: P(|mean − 1/2| ≥ 0.002) ≤ 2·exp(−2·10⁶·0.002²) ≈ 6.7e-4
        let s = sample(&FiniteDistribution::uniform(2).unwrap(), 1_000_000, 11, 0);
        let ones = s.points.iter().filter(|&&x| x == 1).count() as f64 / 1e6;
        assert!((ones - 0.5).abs() < 0.002, "{ones}");
    }

    #[test]
    fn blocks_split_evenly() {
        let s = Sample {
            source: Some(1),
            points: (0..6).collect(),
        };
        let b: Vec<_> = s.view().blocks(2).map(|b| b.points.to_vec()).collect();
        assert_eq!(b, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert_eq!(s.view().blocks_exact(0, 3).len(), 3);
    }
}
