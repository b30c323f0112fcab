//! Low-randomness approximation of a finite distribution: each support
//! element gets `⌊p·2^k⌋` of the `2^k` tape cells and the leftover cells go to
//! the mode. All arithmetic is exact.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};

use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::tape::{bits_for, BitTape};

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSampler {
    elements: Vec<u32>,
    cells: Vec<u64>,
    bits: usize,
    tv: BigRational,
}

pub fn rational_from_f64(p: f64) -> BigRational {
    BigRational::from_float(p).expect("finite probability")
}

/// Compresses `base` (pairs of element and exact probability, summing to one)
/// onto `bits` random bits.
pub fn compress_distribution(base: &[(u32, BigRational)], bits: usize) -> Result<CompressedSampler> {
    let positive: Vec<&(u32, BigRational)> = base.iter().filter(|(_, p)| p.is_positive()).collect();
    if positive.is_empty() {
        return Err(Error::InvalidDistribution("no positive mass".into()));
    }
    if base.iter().any(|(_, p)| p.is_negative()) {
        return Err(Error::InvalidDistribution("negative probability".into()));
    }
    let total: BigRational = base.iter().map(|(_, p)| p.clone()).sum();
    if total != BigRational::one() {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    let min_bits = bits_for(positive.len() as u64);
    if bits < min_bits {
        return Err(Error::TooFewBits {
            bits,
            min_bits,
            support: positive.len(),
        });
    }
    if bits > 62 {
        return Err(Error::param("bits", format!("{bits} exceeds 62")));
    }

    let scale = BigRational::from_integer(BigInt::from(1u64 << bits));
    let mut elements: Vec<u32> = positive.iter().map(|(x, _)| *x).collect();
    let mut order: Vec<usize> = (0..elements.len()).collect();
    order.sort_by_key(|&i| elements[i]);
    elements = order.iter().map(|&i| elements[i]).collect();
    let probs: Vec<BigRational> = order.iter().map(|&i| positive[i].1.clone()).collect();

    let mut cells: Vec<u64> = probs
        .iter()
        .map(|p| (p * &scale).floor().to_integer().to_u64().expect("cell count fits"))
        .collect();
    let used: u64 = cells.iter().sum();
    let mut mode = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[mode] {
            mode = i;
        }
    }
    cells[mode] += (1u64 << bits) - used;

    let tv = probs
        .iter()
        .zip(&cells)
        .map(|(p, &c)| (p - BigRational::from_integer(BigInt::from(c)) / &scale).abs())
        .sum::<BigRational>()
        / BigRational::from_integer(BigInt::from(2));
    Ok(CompressedSampler {
        elements,
        cells,
        bits,
        tv,
    })
}

/// Compresses a floating-point distribution; every `f64` is an exact dyadic
/// rational so no rounding enters the construction.
pub fn compress_f64(base: &FiniteDistribution, bits: usize) -> Result<CompressedSampler> {
    let exact: Vec<(u32, BigRational)> = base.iter().map(|(x, p)| (x, rational_from_f64(p))).collect();
    let total: BigRational = exact.iter().map(|(_, p)| p.clone()).sum();
    // renormalize the float sum's last-ulp error onto exact ground
    let exact: Vec<(u32, BigRational)> = exact.into_iter().map(|(x, p)| (x, p / &total)).collect();
    compress_distribution(&exact, bits)
}

impl CompressedSampler {
    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Exact total-variation distance to the base distribution.
    pub fn tv(&self) -> &BigRational {
        &self.tv
    }

    pub fn elements(&self) -> &[u32] {
        &self.elements
    }

    /// Number of `2^bits` cells assigned to each element.
    pub fn cells(&self) -> &[u64] {
        &self.cells
    }

    /// Element stored under the tape value `index`.
    pub fn lookup(&self, index: u64) -> u32 {
        let mut acc = 0u64;
        for (x, &c) in self.elements.iter().zip(&self.cells) {
            acc += c;
            if index < acc {
                return *x;
            }
        }
        unreachable!("index {index} beyond 2^{}", self.bits)
    }

    pub fn draw(&self, tape: &mut BitTape) -> Result<u32> {
        Ok(self.lookup(tape.read_bits(self.bits)?))
    }

    /// Induced law; exact in `f64` because the masses are multiples of `2^-bits`.
    pub fn law(&self) -> FiniteDistribution {
        let scale = (1u64 << self.bits) as f64;
        FiniteDistribution::new(
            self.elements
                .iter()
                .zip(&self.cells)
                .filter(|(_, &c)| c > 0)
                .map(|(&x, &c)| (x, c as f64 / scale)),
        )
        .expect("cells sum to 2^bits")
    }

    pub fn rational_law(&self) -> Vec<(u32, BigRational)> {
        let scale = BigInt::from(1u64 << self.bits);
        self.elements
            .iter()
            .zip(&self.cells)
            .filter(|(_, &c)| c > 0)
            .map(|(&x, &c)| (x, BigRational::new(BigInt::from(c), scale.clone())))
            .collect()
    }
}

pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}
