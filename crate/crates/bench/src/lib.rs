//! Benchmark harness: deterministic synthetic fixtures, a brute-force
//! oracle, and a timing driver that reports latency, recall, and memory for
//! every configured algorithm and batch size.
//!
//! Fixtures are a change log (items) plus a JSONL query file, both fully
//! determined by a [`BenchConfig`] seed, so runs are reproducible down to
//! the byte. Recall is always measured against [`oracle`], never against
//! another engine configuration.

pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod synthetic;

pub use config::{AlgoSpec, BenchConfig, ClauseProfile};
pub use error::{BenchError, Result};
pub use harness::{render_table, run_benchmark, BenchReport, BenchRow, EnvInfo, MemoryReport};
pub use oracle::{brute_force_topk, clause_passes, filter_passes, recall_at_k};
pub use synthetic::{
    gen_synthetic, positional_filter, read_queries, to_core_query, Fixtures, QueryFixture,
};
