use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),

    #[error("clause {clause:?}: selectivity {target} unsatisfiable: {detail}")]
    Unsatisfiable { clause: String, target: f64, detail: String },

    #[error("fixture problem: {0}")]
    BadFixture(String),

    #[error("{path}: line {line}: {detail}")]
    BadQueryFile { path: std::path::PathBuf, line: u64, detail: String },

    #[error(transparent)]
    Core(#[from] linr_core::Error),

    #[error(transparent)]
    Ingest(#[from] linr_ingest::IngestError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
