use thiserror::Error;

/// Unified error type for index construction, ingestion, and query evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("allocation refused: index needs {needed} bytes but budget is {budget}")]
    AllocationRefused { needed: u64, budget: u64 },

    #[error("index full: all {capacity} slots occupied")]
    CapacityExhausted { capacity: usize },

    #[error("embedding length {got} does not match index dim {expected}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value at embedding coordinate {0}")]
    NonFinite(usize),

    #[error("record has {got} attribute lists but schema has {expected} clauses")]
    ClauseArityMismatch { expected: usize, got: usize },

    #[error("clause {clause:?} holds {got} attributes, max is {max}")]
    TooManyAttrs { clause: String, max: usize, got: usize },

    #[error("attribute value {0:#x} is reserved")]
    ReservedAttr(u64),

    #[error("filter names {got} clauses but schema has {expected}")]
    FilterArityMismatch { expected: usize, got: usize },

    #[error("unknown clause {0:?}")]
    UnknownClause(String),

    #[error("bit-code width mismatch: {a} vs {b} bits")]
    CodeWidthMismatch { a: usize, b: usize },

    #[error("algorithm v3 requires quant_bits > 0 in the index config")]
    QuantizationDisabled,

    #[error("keep_fraction {0} outside (0, 1]")]
    BadKeepFraction(f32),

    #[error("k must be >= 1")]
    ZeroK,

    #[error("record seq {seq} does not advance applied seq {applied}")]
    SeqRegression { seq: u64, applied: u64 },

    #[error("weights entry {name:?}: {reason}")]
    BadWeights { name: String, reason: String },

    #[error("missing weights entry {0:?}")]
    MissingWeights(String),

    #[error("query feature {0:?} required by scorer but not supplied")]
    MissingFeature(String),

    #[error("scorer {0:?} requires a weights file")]
    WeightsRequired(&'static str),

    #[error("cluster table is empty")]
    NoClusters,

    #[error("k-means needs {k} clusters but only {n} points were given")]
    TooFewPoints { k: usize, n: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
