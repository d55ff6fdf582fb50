//! Startup path: optional snapshot, then log replay up to the end of file.
//!
//! The result is handed to the updator, which continues tailing from the
//! byte offset recorded here. "Index state" throughout means logical state:
//! the set of live items with their payloads, plus the applied seq. Physical
//! slot numbers are not part of it; a snapshot compacts tombstones away, so
//! a warm-started index can lay the same items out differently than one that
//! replayed the full history.

use std::path::Path;

use linr_core::{Index, IndexConfig};

use crate::changelog::{LogTailer, TailEvent};
use crate::error::{IngestError, Result};
use crate::snapshot::load_snapshot_with_meta;

/// A bootstrapped index plus the hand-over point for the updator.
#[derive(Debug)]
pub struct Bootstrap {
    pub index: Index,
    /// First log byte the updator should consume.
    pub log_offset: u64,
    /// Complete log lines already consumed.
    pub log_lines: u64,
    /// Records applied from the log (those with seq above the watermark).
    pub replayed: u64,
    /// Log records skipped: unparseable lines or records the index refused.
    pub poisoned: u64,
    /// Records at or below the snapshot watermark, already in the snapshot.
    pub skipped: u64,
    /// Weights file named by the snapshot, empty without a snapshot.
    pub weights_ref: String,
}

/// Build an index from a snapshot (if given) plus everything in the change
/// log past the snapshot's watermark. Replay skips what the snapshot already
/// holds, so the result equals a full replay of the merged history.
///
/// Unreadable lines and records the index rejects are skipped and counted,
/// matching what the live updator would have done when they first appeared;
/// a restart therefore converges to the same state the running process had.
/// Seq order violations between parsed records are different: they mean the
/// log itself is corrupt, and startup fails rather than serve from it.
pub fn bootstrap(
    snapshot_path: Option<&Path>,
    changelog_path: &Path,
    cfg: &IndexConfig,
) -> Result<Bootstrap> {
    let (mut index, weights_ref) = match snapshot_path {
        Some(p) => {
            let (index, meta) = load_snapshot_with_meta(p, cfg)?;
            log::info!(
                "snapshot {}: {} items, watermark {}",
                p.display(),
                meta.count,
                meta.watermark
            );
            (index, meta.weights_ref)
        }
        None => (Index::create(cfg.clone())?, String::new()),
    };
    let watermark = index.applied_seq();

    let mut tailer = LogTailer::new(changelog_path, cfg, 0, 0);
    let mut prev_seq: Option<u64> = None;
    let mut replayed = 0u64;
    let mut poisoned = 0u64;
    let mut skipped = 0u64;
    for event in tailer.poll()? {
        match event {
            TailEvent::Malformed { line, detail } => {
                log::warn!("{}:{line}: skipping: {detail}", changelog_path.display());
                poisoned += 1;
            }
            TailEvent::Record { line, rec } => {
                if let Some(p) = prev_seq {
                    if rec.seq <= p {
                        return Err(IngestError::SeqOrder { line, seq: rec.seq, prev: p });
                    }
                }
                prev_seq = Some(rec.seq);
                if rec.seq <= watermark {
                    skipped += 1;
                    continue;
                }
                match index.apply(&rec) {
                    Ok(()) => replayed += 1,
                    Err(e) => {
                        log::warn!(
                            "{}:{line}: seq {} not applied: {e}",
                            changelog_path.display(),
                            rec.seq
                        );
                        poisoned += 1;
                    }
                }
            }
        }
    }

    Ok(Bootstrap {
        index,
        log_offset: tailer.offset(),
        log_lines: tailer.lines_consumed(),
        replayed,
        poisoned,
        skipped,
        weights_ref,
    })
}

/// Exact-comparison form of an index's logical state. Embeddings are carried
/// as raw bits so equality is equality, not closeness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalState {
    pub applied_seq: u64,
    /// Sorted by id: (id, embedding bits, attrs per clause, code words).
    pub items: Vec<(u64, Vec<u32>, Vec<Vec<u64>>, Option<Vec<u64>>)>,
}

pub fn logical_state(index: &Index) -> LogicalState {
    let mut items: Vec<_> = index
        .export_live()
        .into_iter()
        .map(|r| {
            let bits = r.embedding.iter().map(|v| v.to_bits()).collect();
            (r.id, bits, r.attrs, r.code)
        })
        .collect();
    items.sort_by_key(|it| it.0);
    LogicalState { applied_seq: index.applied_seq(), items }
}
