//! The shared random-bit tape. Every random bit an algorithm uses is a read
//! from a `BitTape`, so the cursor is the meter for randomness complexity.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::seed::{stream_rng, TAG_TAPE};

pub const DEFAULT_MAX_ENUM_BITS: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitTape {
    words: Vec<u64>,
    len: usize,
    cursor: usize,
}

impl BitTape {
    pub fn empty() -> Self {
        Self {
            words: Vec::new(),
            len: 0,
            cursor: 0,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self {
            words,
            len: bits.len(),
            cursor: 0,
        }
    }

    /// Tape whose `len` bits spell `value` most-significant bit first, so that
    /// increasing values enumerate tapes in lexicographic order.
    pub fn from_value(value: u64, len: usize) -> Self {
        assert!(len <= 64);
        let bits: Vec<bool> = (0..len).map(|i| (value >> (len - 1 - i)) & 1 == 1).collect();
        Self::from_bits(&bits)
    }

    pub fn budget(&self) -> usize {
        self.len
    }

    /// Number of bits consumed so far.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.len - self.cursor
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.bit_at(i)).collect()
    }

    #[inline]
    fn bit_at(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.cursor >= self.len {
            return Err(Error::BudgetExhausted {
                budget: self.len,
                attempted: self.cursor + 1,
            });
        }
        let b = self.bit_at(self.cursor);
        self.cursor += 1;
        Ok(b)
    }

    /// Reads `k ≤ 64` bits as an integer, first bit most significant.
    pub fn read_bits(&mut self, k: usize) -> Result<u64> {
        assert!(k <= 64);
        if self.cursor + k > self.len {
            return Err(Error::BudgetExhausted {
                budget: self.len,
                attempted: self.cursor + k,
            });
        }
        let mut v = 0u64;
        for _ in 0..k {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    /// Hands the next `len` bits to a sub-computation as its own tape. The
    /// parent meter advances by `len` regardless of how many the child reads.
    pub fn split_off(&mut self, len: usize) -> Result<BitTape> {
        if self.cursor + len > self.len {
            return Err(Error::BudgetExhausted {
                budget: self.len,
                attempted: self.cursor + len,
            });
        }
        let bits: Vec<bool> = (self.cursor..self.cursor + len).map(|i| self.bit_at(i)).collect();
        self.cursor += len;
        Ok(BitTape::from_bits(&bits))
    }

    /// Same contents, cursor rewound.
    pub fn replay(&self) -> BitTape {
        BitTape {
            words: self.words.clone(),
            len: self.len,
            cursor: 0,
        }
    }
}

/// `len` pseudorandom bits keyed by `(master_seed, stream_id)` (ChaCha8).
pub fn fresh_tape(master_seed: u64, stream_id: u64, len: usize) -> BitTape {
    let mut rng = stream_rng(master_seed, &[TAG_TAPE, stream_id]);
    let mut words = vec![0u64; len.div_ceil(64)];
    for w in &mut words {
        *w = rng.next_u64();
    }
    if !len.is_multiple_of(64) {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << (len % 64)) - 1;
        }
    }
    BitTape { words, len, cursor: 0 }
}

/// All `2^len` tapes in lexicographic order.
pub fn enumerate_tapes(len: usize, cap: usize) -> Result<impl ExactSizeIterator<Item = BitTape>> {
    if len > cap || len >= 64 {
        return Err(Error::EnumerationTooLarge { requested: len, cap });
    }
    Ok((0..1usize << len).map(move |v| BitTape::from_value(v as u64, len)))
}

/// Smallest `b` with `2^b ≥ count`.
pub fn bits_for(count: u64) -> usize {
    if count <= 1 {
        0
    } else {
        (64 - (count - 1).leading_zeros()) as usize
    }
}
