//! Explicit finite distributions: the currency for every exact computation in
//! the crate. Data distributions and output laws share this type; elements are
//! `u32` ids and the domain order is the numeric order of the ids.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    support: Vec<u32>,
    probs: Vec<f64>,
}

impl FiniteDistribution {
    /// Builds a distribution from `(element, probability)` pairs. Pairs may come
    /// in any order; zero-probability entries are kept.
    pub fn new(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut pairs: Vec<(u32, f64)> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDistribution("duplicate support element".into()));
        }
        if let Some(&(x, p)) = pairs.iter().find(|(_, p)| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(format!("element {x} has probability {p}")));
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let (support, probs) = pairs.into_iter().unzip();
        Ok(Self { support, probs })
    }

    /// Distribution over `0..probs.len()`.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().enumerate().map(|(i, &p)| (i as u32, p)))
    }

    pub fn uniform(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        Ok(Self {
            support: (0..k).collect(),
            probs: vec![1.0 / k as f64; k as usize],
        })
    }

    pub fn point(x: u32) -> Self {
        Self {
            support: vec![x],
            probs: vec![1.0],
        }
    }

    /// Law with `counts[y] / total` mass on each key; used for tape-enumerated
    /// laws where `total` is a power of two and the masses are exact.
    pub fn from_counts(counts: &BTreeMap<u32, u64>) -> Result<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::InvalidDistribution("no mass".into()));
        }
        let t = total as f64;
        Ok(Self {
            support: counts.keys().copied().collect(),
            probs: counts.values().map(|&c| c as f64 / t).collect(),
        })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let w: Vec<(u32, f64)> = weights.into_iter().collect();
        let total: f64 = w.iter().map(|p| p.1).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Self::new_unchecked_sum(w.into_iter().map(|(x, p)| (x, p / total)))
    }

    fn new_unchecked_sum(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut pairs: Vec<(u32, f64)> = pairs.into_iter().collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDistribution("duplicate support element".into()));
        }
        let (support, probs) = pairs.into_iter().unzip();
        Ok(Self { support, probs })
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob(&self, x: u32) -> f64 {
        self.support.binary_search(&x).map(|i| self.probs[i]).unwrap_or(0.0)
    }

    /// Elements with strictly positive mass.
    pub fn positive_support(&self) -> Vec<u32> {
        self.iter().filter(|&(_, p)| p > 0.0).map(|(x, _)| x).collect()
    }

    /// Most likely element; ties go to the smallest id.
    pub fn mode(&self) -> u32 {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        self.support[best]
    }

    /// Inverse CDF: the element whose cumulative interval contains `u ∈ [0,1)`.
    pub fn quantile(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        for (x, p) in self.iter() {
            acc += p;
            if u < acc {
                return x;
            }
        }
        // rounding slack at the top end
        self.iter()
            .filter(|(_, p)| *p > 0.0)
            .last()
            .map_or(self.support[0], |(x, _)| x)
    }

    /// Σ p(y)²: two-run collision probability of independent draws.
    pub fn collision_probability(&self) -> f64 {
        self.probs.iter().map(|p| p * p).sum()
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * union_iter(self, other).map(|(_, p, q)| (p - q).abs()).sum::<f64>()
    }

    /// Hockey-stick divergence Σ_y max(P(y) − e^ε Q(y), 0).
    pub fn hockey_stick(&self, other: &Self, epsilon: f64) -> f64 {
        let scale = epsilon.exp();
        union_iter(self, other)
            .map(|(_, p, q)| (p - scale * q).max(0.0))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Stable 64-bit identity of the distribution (within one build).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.support.hash(&mut h);
        for p in &self.probs {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn to_pairs(&self) -> Vec<(u32, f64)> {
        self.iter().collect()
    }
}

fn union_iter<'a>(a: &'a FiniteDistribution, b: &'a FiniteDistribution) -> impl Iterator<Item = (u32, f64, f64)> + 'a {
    let keys: std::collections::BTreeSet<u32> = a.support.iter().chain(b.support.iter()).copied().collect();
    keys.into_iter().map(move |k| (k, a.prob(k), b.prob(k)))
}

/// JSON form: an array of `[element_id, probability]` pairs.
impl Serialize for FiniteDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_pairs().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<(u32, f64)>::deserialize(d)?;
        FiniteDistribution::new(pairs).map_err(serde::de::Error::custom)
    }
}
