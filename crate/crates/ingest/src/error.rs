use std::path::PathBuf;
use thiserror::Error;

/// Errors from the durable formats and the ingestion pipeline.
///
/// File problems carry the path; line-oriented problems carry the 1-based
/// line number so a corrupt log can be fixed by hand.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: not a {expected} file (bad magic)")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported format version {got} (this build reads version {supported})")]
    UnsupportedVersion { path: PathBuf, got: u32, supported: u32 },

    #[error("{path}: truncated while reading {section}")]
    Truncated { path: PathBuf, section: &'static str },

    #[error("snapshot/config mismatch on {field}: snapshot has {snapshot}, config has {config}")]
    SchemaMismatch { field: &'static str, snapshot: String, config: String },

    #[error("{path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("line {line}: malformed change record: {detail}")]
    Malformed { line: u64, detail: String },

    #[error("line {line}: seq {seq} does not advance previous seq {prev}")]
    SeqOrder { line: u64, seq: u64, prev: u64 },

    #[error("stored code for id {id} does not match recomputation; wrong seed or quantizer drift")]
    CodeMismatch { id: u64 },

    #[error("updator thread is not running")]
    UpdatorStopped,

    #[error(transparent)]
    Core(#[from] linr_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl IngestError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> IngestError {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;
