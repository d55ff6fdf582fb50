//! linr-core: an in-memory embedding-retrieval engine.
//!
//! The engine stores fixed-dimension embeddings with per-item filter
//! attributes and an optional 1-bit quantized code, serves exhaustive
//! filtered top-k queries under three interchangeable pipelines, and accepts
//! live upserts and deletes from a single writer while any number of cloned
//! [`Searcher`] handles keep querying.
//!
//! Module map:
//! - [`config`]: index shape, clause schema, memory arithmetic
//! - [`mask`]: packed slot bit masks
//! - [`quantize`]: sign-OPORP bit codes and the cosine estimator
//! - [`filter`]: attribute clause evaluation
//! - [`index`]: slot storage, seqlock publication, writer and searcher handles
//! - [`scoring`]: pluggable scorers (dot, cosine, MLP, mixture-of-logits)
//! - [`retrieval`]: the three query pipelines and top-k selection
//! - [`change`]: sequenced mutation records

pub mod change;
pub mod config;
pub mod error;
pub mod filter;
pub mod index;
pub mod mask;
pub mod quantize;
pub mod retrieval;
pub mod scoring;

pub use change::{ChangeOp, ChangeRecord};
pub use config::{ClauseSpec, IndexConfig, Polarity, ATTR_SENTINEL};
pub use error::{Error, Result};
pub use filter::QueryFilter;
pub use index::{normalize_upsert, ExportRecord, Index, Searcher};
pub use mask::BitMask;
pub use quantize::{est_cosine, matched_bits, BitCode, OporpParams};
pub use retrieval::{Algo, Query, RetrievalResult};
