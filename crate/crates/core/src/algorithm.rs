//! Metered algorithms: deterministic maps `(sample, tape) → output` with a
//! declared sample size and random-bit budget. Transforms consume and produce
//! `Arc<dyn Algorithm>`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::sample::SampleRef;
use crate::tape::{enumerate_tapes, BitTape};
use crate::task::Output;

pub trait Algorithm: Send + Sync {
    /// Number of data points consumed per run.
    fn sample_size(&self) -> usize;

    /// Number of tape bits the algorithm may read.
    fn bit_budget(&self) -> usize;

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output>;

    /// Exact output law on a fixed sample, over a uniform tape. The default
    /// enumerates every tape; composites override it with an exact shortcut.
    fn exact_law(&self, sample: SampleRef<'_>, cap: usize) -> Result<FiniteDistribution> {
        exact_law_over_tapes(self, sample, cap)
    }

    fn label(&self) -> String {
        "algorithm".into()
    }
}

pub type AlgorithmRef = Arc<dyn Algorithm>;

/// Output law of `alg` on `sample` by running it on all `2^budget` tapes.
pub fn exact_law_over_tapes<A: Algorithm + ?Sized>(
    alg: &A,
    sample: SampleRef<'_>,
    cap: usize,
) -> Result<FiniteDistribution> {
    let budget = alg.bit_budget();
    let mut counts: BTreeMap<Output, u64> = BTreeMap::new();
    for mut tape in enumerate_tapes(budget, cap)? {
        *counts.entry(alg.eval(sample, &mut tape)?).or_default() += 1;
    }
    debug_assert!(counts.len() as u64 <= 1u64 << budget);
    FiniteDistribution::from_counts(&counts)
}

/// Most frequent element; ties go to the smallest id. `None` on empty input.
pub fn plurality(outputs: impl IntoIterator<Item = Output>) -> Option<Output> {
    let mut counts: BTreeMap<Output, usize> = BTreeMap::new();
    for y in outputs {
        *counts.entry(y).or_default() += 1;
    }
    let mut best: Option<(Output, usize)> = None;
    for (y, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((y, c));
        }
    }
    best.map(|b| b.0)
}

// ---------------------------------------------------------------------------
// Mock algorithms with declared laws
// ---------------------------------------------------------------------------

/// Algorithm whose output law on each registered distribution is declared up
/// front. The sample is hashed into a uniform variate `u` and the output is the
/// `u`-quantile of the law selected by the tape, so all tapes share `u`.
#[derive(Debug, Clone)]
pub struct OracleAlgorithm {
    sample_size: usize,
    bits: usize,
    laws: HashMap<u64, Vec<FiniteDistribution>>,
    salt: u64,
}

impl OracleAlgorithm {
    /// Per-tape laws: `entries[i].1[r]` is the law under tape value `r`, and
    /// must have exactly `2^bits` entries.
    pub fn with_tape_laws(
        entries: Vec<(FiniteDistribution, Vec<FiniteDistribution>)>,
        bits: usize,
        sample_size: usize,
    ) -> Result<Self> {
        if bits > 16 {
            return Err(Error::param("bits", format!("{bits} > 16 for an oracle algorithm")));
        }
        if sample_size == 0 {
            return Err(Error::param("sample_size", "oracle algorithms need at least one point"));
        }
        let mut laws = HashMap::new();
        for (d, per_tape) in entries {
            if per_tape.len() != 1 << bits {
                return Err(Error::param(
                    "laws",
                    format!("expected {} per-tape laws, got {}", 1 << bits, per_tape.len()),
                ));
            }
            laws.insert(d.fingerprint(), per_tape);
        }
        Ok(Self {
            sample_size,
            bits,
            laws,
            salt: 0,
        })
    }

    /// Changes the hash salt, giving an independent copy with the same laws.
    pub fn salted(mut self, salt: u64) -> Self {
        self.salt = salt;
        self
    }

    /// Declared law on `dist`, averaged over tapes.
    pub fn declared_law(&self, dist: &FiniteDistribution) -> Result<FiniteDistribution> {
        let per_tape = self.laws_for(dist.fingerprint())?;
        let mut acc: BTreeMap<Output, f64> = BTreeMap::new();
        for law in per_tape {
            for (y, p) in law.iter() {
                *acc.entry(y).or_default() += p / per_tape.len() as f64;
            }
        }
        FiniteDistribution::from_weights(acc)
    }

    pub fn tape_laws(&self, dist: &FiniteDistribution) -> Result<&[FiniteDistribution]> {
        self.laws_for(dist.fingerprint())
    }

    fn laws_for(&self, fingerprint: u64) -> Result<&[FiniteDistribution]> {
        self.laws
            .get(&fingerprint)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownDistribution { fingerprint })
    }

    fn lookup(&self, sample: SampleRef<'_>) -> Result<(&[FiniteDistribution], f64)> {
        sample.check_len(self.sample_size)?;
        let source = sample.source.ok_or(Error::MissingSource)?;
        Ok((self.laws_for(source)?, sample.hash_uniform(self.salt)))
    }
}

/// Budget-0 algorithm with the declared output law on each distribution.
pub fn make_oracle_algorithm(
    laws: Vec<(FiniteDistribution, FiniteDistribution)>,
    sample_size: usize,
) -> Result<OracleAlgorithm> {
    OracleAlgorithm::with_tape_laws(laws.into_iter().map(|(d, l)| (d, vec![l])).collect(), 0, sample_size)
}

impl Algorithm for OracleAlgorithm {
    fn sample_size(&self) -> usize {
        self.sample_size
    }

    fn bit_budget(&self) -> usize {
        self.bits
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        let (laws, u) = self.lookup(sample)?;
        let r = tape.read_bits(self.bits)? as usize;
        Ok(laws[r].quantile(u))
    }

    fn exact_law(&self, sample: SampleRef<'_>, _cap: usize) -> Result<FiniteDistribution> {
        let (laws, u) = self.lookup(sample)?;
        let mut counts: BTreeMap<Output, u64> = BTreeMap::new();
        for law in laws {
            *counts.entry(law.quantile(u)).or_default() += 1;
        }
        FiniteDistribution::from_counts(&counts)
    }

    fn label(&self) -> String {
        format!("oracle[{} bits]", self.bits)
    }
}

// ---------------------------------------------------------------------------
// Small concrete algorithms
// ---------------------------------------------------------------------------

/// Ignores its input and always answers `value`.
#[derive(Debug, Clone)]
pub struct ConstantAlgorithm {
    pub value: Output,
    pub sample_size: usize,
}

impl Algorithm for ConstantAlgorithm {
    fn sample_size(&self) -> usize {
        self.sample_size
    }
    fn bit_budget(&self) -> usize {
        0
    }
    fn eval(&self, _sample: SampleRef<'_>, _tape: &mut BitTape) -> Result<Output> {
        Ok(self.value)
    }
}

/// Reads its whole tape and outputs it as an integer.
#[derive(Debug, Clone)]
pub struct TapeValueAlgorithm {
    pub bits: usize,
}

impl Algorithm for TapeValueAlgorithm {
    fn sample_size(&self) -> usize {
        0
    }
    fn bit_budget(&self) -> usize {
        self.bits
    }
    fn eval(&self, _sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        Ok(tape.read_bits(self.bits)? as Output)
    }
}

/// Deterministic majority of `n` binary points: 1 iff more than half are 1.
#[derive(Debug, Clone)]
pub struct MajorityBit {
    pub n: usize,
}

impl Algorithm for MajorityBit {
    fn sample_size(&self) -> usize {
        self.n
    }
    fn bit_budget(&self) -> usize {
        0
    }
    fn eval(&self, sample: SampleRef<'_>, _tape: &mut BitTape) -> Result<Output> {
        sample.check_len(self.n)?;
        let ones = sample.points.iter().filter(|&&x| x == 1).count();
        Ok(Output::from(2 * ones > self.n))
    }
    fn label(&self) -> String {
        format!("majority-bit[{}]", self.n)
    }
}

/// Empirical mean of `n` binary points rounded to the nearest point of the
/// grid `{0, step, …, 1}` (ties round down); outputs the grid index.
#[derive(Debug, Clone)]
pub struct RoundedMean {
    pub n: usize,
    pub step: f64,
}

impl Algorithm for RoundedMean {
    fn sample_size(&self) -> usize {
        self.n
    }
    fn bit_budget(&self) -> usize {
        0
    }
    fn eval(&self, sample: SampleRef<'_>, _tape: &mut BitTape) -> Result<Output> {
        sample.check_len(self.n)?;
        let mean = sample.points.iter().filter(|&&x| x == 1).count() as f64 / self.n.max(1) as f64;
        let scaled = mean / self.step;
        let down = scaled.floor();
        let idx = if scaled - down > 0.5 { down + 1.0 } else { down };
        Ok(idx as Output)
    }
    fn label(&self) -> String {
        format!("rounded-mean[{}, {}]", self.n, self.step)
    }
}
