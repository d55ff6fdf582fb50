//! Durable formats and the live ingestion pipeline.
//!
//! Two files carry all persistent state:
//!
//! - the change log, line-delimited JSON, append-only, the source of truth;
//! - snapshots, binary images of the live index taken at a known seq, so a
//!   restart can skip most of the replay.
//!
//! [`bootstrap`] builds an index from snapshot plus log tail; [`Updator`]
//! then owns the index on its own thread and keeps applying new log records
//! while readers query through [`linr_core::Searcher`] clones. Snapshot plus
//! remaining log always replays to the same logical state as the full log,
//! so the snapshot is purely an optimization and can be deleted at will.

pub mod bootstrap;
pub mod changelog;
mod error;
pub mod snapshot;
pub mod updator;

pub use bootstrap::{bootstrap, logical_state, Bootstrap, LogicalState};
pub use changelog::{decode_record, encode_record, read_log, LogTailer, LogWriter, TailEvent};
pub use error::{IngestError, Result};
pub use snapshot::{
    f16_to_f32, f32_to_f16, load_snapshot, load_snapshot_with_meta, read_snapshot_meta,
    write_snapshot, write_snapshot_opts, Precision, SnapshotMeta, SnapshotOptions,
};
pub use updator::{Updator, UpdatorGauges};
