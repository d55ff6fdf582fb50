//! Index configuration and memory arithmetic.
//!
//! The index preallocates every array at creation time, so the full cost of a
//! configuration is known before a single item is inserted. `estimated_bytes`
//! is that cost; `CompressionReport` is the per-item comparison between
//! half-precision embeddings and 1-bit codes used by capacity planning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved attribute value used as padding in fixed-width attribute rows.
/// Real attributes must be strictly below it.
pub const ATTR_SENTINEL: u64 = u64::MAX;

/// How a clause combines with item attributes.
///
/// `Match`: the item passes if it shares at least one attribute with the
/// query's list. `ReverseMatch`: the item passes if it shares none.
/// An empty query list always passes, regardless of polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Match,
    ReverseMatch,
}

/// One filter clause in the index schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseSpec {
    pub name: String,
    pub polarity: Polarity,
    /// Fixed per-item attribute budget for this clause; rows are padded to it.
    pub max_attrs: usize,
}

/// Static shape of an index. Immutable once the index is created.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Slot count. Upserts beyond this fail; the backing arrays never grow.
    pub capacity: usize,
    /// Embedding dimensionality.
    pub dim: usize,
    pub clauses: Vec<ClauseSpec>,
    /// Bits per quantized code; 0 disables quantization, otherwise a
    /// multiple of 64.
    #[serde(default)]
    pub quant_bits: usize,
    /// Seed for the quantizer's random projections.
    #[serde(default)]
    pub seed: u64,
    /// Optional hard cap on preallocation; creation fails if the estimate
    /// exceeds it.
    #[serde(default)]
    pub memory_budget_bytes: Option<u64>,
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidConfig("capacity must be >= 1".into()));
        }
        if self.capacity > u32::MAX as usize {
            return Err(Error::InvalidConfig("capacity exceeds u32 slot space".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        if self.quant_bits % 64 != 0 {
            return Err(Error::InvalidConfig(format!(
                "quant_bits must be a multiple of 64, got {}",
                self.quant_bits
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.clauses {
            if c.name.is_empty() {
                return Err(Error::InvalidConfig("clause name must be non-empty".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate clause name {:?}", c.name)));
            }
            if c.max_attrs == 0 {
                return Err(Error::InvalidConfig(format!(
                    "clause {:?}: max_attrs must be >= 1",
                    c.name
                )));
            }
        }
        if let Some(budget) = self.memory_budget_bytes {
            let needed = self.estimated_bytes();
            if needed > budget {
                return Err(Error::AllocationRefused { needed, budget });
            }
        }
        Ok(())
    }

    pub fn clause_index(&self, name: &str) -> Result<usize> {
        self.clauses
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownClause(name.to_string()))
    }

    /// Bytes per item for full-precision embedding storage (f32).
    pub fn embedding_bytes_per_item(&self) -> u64 {
        self.dim as u64 * 4
    }

    /// Bytes per item for attribute rows, padding included.
    pub fn attr_bytes_per_item(&self) -> u64 {
        self.clauses.iter().map(|c| c.max_attrs as u64 * 8 + 4).sum()
    }

    /// Bytes per item for the quantized code; 0 when quantization is off.
    pub fn code_bytes_per_item(&self) -> u64 {
        self.quant_bits as u64 / 8
    }

    /// Total preallocation estimate: payload arrays plus per-slot metadata
    /// (version word, id, liveness).
    pub fn estimated_bytes(&self) -> u64 {
        let per_item = self.embedding_bytes_per_item()
            + self.attr_bytes_per_item()
            + self.code_bytes_per_item()
            + 8  // seqlock version
            + 8  // item id
            + 1; // live flag
        per_item * self.capacity as u64
    }
}

/// Per-item storage comparison between f16 embeddings and 1-bit codes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CompressionReport {
    pub dim: usize,
    pub quant_bits: usize,
    pub f16_bytes_per_item: u64,
    pub code_bytes_per_item: u64,
    /// f16 embedding bytes divided by code bytes.
    pub ratio: f64,
}

pub fn compression_report(dim: usize, quant_bits: usize) -> CompressionReport {
    let f16_bytes = dim as u64 * 2;
    let code_bytes = (quant_bits as u64) / 8;
    CompressionReport {
        dim,
        quant_bits,
        f16_bytes_per_item: f16_bytes,
        code_bytes_per_item: code_bytes,
        ratio: if code_bytes == 0 { f64::INFINITY } else { f16_bytes as f64 / code_bytes as f64 },
    }
}

/// Fleet-scale storage in GiB for `n_items` embeddings at the given per-item cost.
pub fn corpus_gib(n_items: u64, bytes_per_item: u64) -> f64 {
    (n_items as f64 * bytes_per_item as f64) / (1u64 << 30) as f64
}
