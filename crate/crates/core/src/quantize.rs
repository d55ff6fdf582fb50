//! 1-bit OPORP quantization.
//!
//! An embedding is reduced to `bits` sign bits: permute the coordinates,
//! multiply by a Rademacher (+-1) vector, sum disjoint bins, keep each bin
//! sum's sign. Each permutation yields `padded_dim / bin_len` bits, so the
//! construction repeats with independently seeded permutation groups until
//! `bits` bits exist; surplus bits from the last group are dropped.
//!
//! Bins span `bin_len = max(2, ceil(dim / bits))` coordinates. Zero-padding
//! up to a bin multiple adds fewer than `bin_len` zeros, so every bin keeps
//! at least one real coordinate and no bit is constant by construction.
//!
//! For unit vectors with angle theta, each bit matches with probability
//! `1 - theta / pi`, so `est_cosine` inverts the observed match fraction
//! through `cos(pi * (1 - m / k))`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

/// Packed bit code. Width is always a whole number of u64 words; bit `i`
/// lives in word `i / 64` at position `i % 64`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitCode {
    words: Vec<u64>,
}

impl BitCode {
    pub fn from_words(words: Vec<u64>) -> Self {
        BitCode { words }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bits(&self) -> usize {
        self.words.len() * WORD_BITS
    }

    pub fn get_bit(&self, i: usize) -> bool {
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    /// Bitwise complement. Querying with the inverted code turns XOR+popcount
    /// into a direct matched-bit count.
    pub fn invert(&self) -> BitCode {
        BitCode { words: self.words.iter().map(|w| !w).collect() }
    }
}

/// Number of positions where the codes agree. Widths must match.
pub fn matched_bits(a: &BitCode, b: &BitCode) -> Result<u32> {
    if a.bits() != b.bits() {
        return Err(Error::CodeWidthMismatch { a: a.bits(), b: b.bits() });
    }
    Ok(matched_bits_words(&a.words, &b.words))
}

/// Word-level matched-bit count: popcount of NOT(a XOR b).
#[inline]
pub fn matched_bits_words(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (!(x ^ y)).count_ones()).sum()
}

/// Matched bits of `a` against `b` given NOT(a): with the query inverted
/// once up front, the per-candidate kernel is a bare XOR plus popcount.
#[inline]
pub fn matched_bits_inverted(inv_a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(inv_a.len(), b.len());
    inv_a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Cosine estimate from `matched` agreeing bits out of `bits`.
pub fn est_cosine(matched: u32, bits: usize) -> f32 {
    debug_assert!(matched as usize <= bits && bits > 0);
    (std::f32::consts::PI * (1.0 - matched as f32 / bits as f32)).cos()
}

struct Group {
    /// Input coordinate j lands at permuted position perm[j].
    perm: Vec<u32>,
    /// Rademacher sign attached to each permuted position.
    signs: Vec<f32>,
}

/// Seeded projection parameters shared by every code in one index.
pub struct OporpParams {
    dim: usize,
    bits: usize,
    bin_len: usize,
    padded_dim: usize,
    bins_per_group: usize,
    groups: Vec<Group>,
}

impl OporpParams {
    pub fn derive(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("quantizer dim must be >= 1".into()));
        }
        if bits == 0 || bits % WORD_BITS != 0 {
            return Err(Error::InvalidConfig(format!(
                "quant_bits must be a positive multiple of {WORD_BITS}, got {bits}"
            )));
        }
        let bin_len = (dim.div_ceil(bits)).max(2);
        let padded_dim = dim.div_ceil(bin_len) * bin_len;
        let bins_per_group = padded_dim / bin_len;
        let n_groups = bits.div_ceil(bins_per_group);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::with_capacity(n_groups);
        for _ in 0..n_groups {
            let mut perm: Vec<u32> = (0..padded_dim as u32).collect();
            perm.shuffle(&mut rng);
            let signs = (0..padded_dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            groups.push(Group { perm, signs });
        }
        Ok(OporpParams { dim, bits, bin_len, padded_dim, bins_per_group, groups })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        self.bits / WORD_BITS
    }

    pub fn bin_len(&self) -> usize {
        self.bin_len
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn bins_per_group(&self) -> usize {
        self.bins_per_group
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Quantize one embedding. Bit `i` comes from bin `i % bins_per_group` of
    /// group `i / bins_per_group`; a bin's bit is 1 when its signed sum is
    /// >= 0, so the zero vector maps to the all-ones code.
    pub fn encode(&self, x: &[f32]) -> Result<BitCode> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut words = vec![0u64; self.words_per_code()];
        let mut sums = vec![0.0f32; self.bins_per_group];
        let mut emitted = 0usize;
        for group in &self.groups {
            sums.fill(0.0);
            // Padding coordinates are zero and never change a sum, so only
            // real coordinates are visited.
            for (j, &v) in x.iter().enumerate() {
                let pos = group.perm[j] as usize;
                sums[pos / self.bin_len] += group.signs[pos] * v;
            }
            for &s in &sums {
                if emitted == self.bits {
                    break;
                }
                if s >= 0.0 {
                    words[emitted / WORD_BITS] |= 1 << (emitted % WORD_BITS);
                }
                emitted += 1;
            }
        }
        debug_assert_eq!(emitted, self.bits);
        Ok(BitCode { words })
    }
}
