//! The single writer: a thread that owns the `Index` and tails the change
//! log, applying each record exactly once. Readers hold `Searcher` clones
//! and are never blocked.
//!
//! Snapshots are taken by the same thread between applies, which is the
//! quiesce point the snapshot writer requires; callers just send a command.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use linr_core::{Index, Searcher};

use crate::changelog::{LogTailer, TailEvent};
use crate::error::{IngestError, Result};
use crate::snapshot::{write_snapshot_opts, SnapshotOptions};

enum Control {
    Nudge,
    Snapshot { path: PathBuf, opts: SnapshotOptions, reply: mpsc::Sender<Result<u64>> },
    Stop,
}

#[derive(Default)]
struct Counters {
    applied_seq: AtomicU64,
    applied: AtomicU64,
    poisoned: AtomicU64,
}

/// Point-in-time updator counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdatorGauges {
    /// Seq of the last applied record.
    pub applied_seq: u64,
    /// Records applied since spawn.
    pub applied: u64,
    /// Records skipped since spawn: unparseable, refused, or out of order.
    pub poisoned: u64,
}

/// Handle to the updator thread. Dropping it without [`Updator::stop`]
/// shuts the thread down but discards the index.
pub struct Updator {
    tx: mpsc::Sender<Control>,
    handle: JoinHandle<Index>,
    counters: Arc<Counters>,
    searcher: Searcher,
}

impl Updator {
    /// Take ownership of a bootstrapped index and start tailing
    /// `changelog_path` from `start_offset` (with `start_lines` lines before
    /// it, for error messages). New records are applied within
    /// `poll_interval` of landing, sooner if someone calls [`Updator::nudge`].
    pub fn spawn(
        index: Index,
        changelog_path: &Path,
        poll_interval: Duration,
        start_offset: u64,
        start_lines: u64,
    ) -> Updator {
        let searcher = index.searcher();
        let counters = Arc::new(Counters::default());
        counters.applied_seq.store(index.applied_seq(), Relaxed);
        let (tx, rx) = mpsc::channel();
        let path = changelog_path.to_path_buf();
        let thread_counters = Arc::clone(&counters);
        let handle = std::thread::Builder::new()
            .name("linr-updator".into())
            .spawn(move || run(index, path, poll_interval, start_offset, start_lines, rx, thread_counters))
            .expect("spawn updator thread");
        Updator { tx, handle, counters, searcher }
    }

    /// Read handle over the index the updator owns.
    pub fn searcher(&self) -> Searcher {
        self.searcher.clone()
    }

    pub fn gauges(&self) -> UpdatorGauges {
        UpdatorGauges {
            applied_seq: self.counters.applied_seq.load(Relaxed),
            applied: self.counters.applied.load(Relaxed),
            poisoned: self.counters.poisoned.load(Relaxed),
        }
    }

    /// Wake the updator now instead of at the next poll tick.
    pub fn nudge(&self) {
        let _ = self.tx.send(Control::Nudge);
    }

    /// Drain the log, then write a snapshot from the updator thread itself;
    /// applies are paused for the duration, queries are not. Returns the
    /// captured watermark.
    pub fn snapshot(&self, path: &Path, opts: SnapshotOptions) -> Result<u64> {
        let (reply, rx) = mpsc::channel();
        self.tx
            .send(Control::Snapshot { path: path.to_path_buf(), opts, reply })
            .map_err(|_| IngestError::UpdatorStopped)?;
        rx.recv().map_err(|_| IngestError::UpdatorStopped)?
    }

    /// Drain whatever is already in the log, stop the thread, and hand the
    /// index back.
    pub fn stop(self) -> Index {
        let _ = self.tx.send(Control::Stop);
        self.handle.join().expect("updator thread panicked")
    }
}

fn run(
    mut index: Index,
    path: PathBuf,
    poll_interval: Duration,
    start_offset: u64,
    start_lines: u64,
    rx: mpsc::Receiver<Control>,
    counters: Arc<Counters>,
) -> Index {
    let mut tailer = LogTailer::new(&path, index.config(), start_offset, start_lines);
    loop {
        let command = rx.recv_timeout(poll_interval);
        if let Err(e) = drain(&mut index, &mut tailer, &counters, &path) {
            // I/O trouble on the log: keep serving reads, retry next tick.
            log::error!("{}: poll failed: {e}", path.display());
        }
        match command {
            Ok(Control::Nudge) | Err(RecvTimeoutError::Timeout) => {}
            Ok(Control::Snapshot { path: snap, opts, reply }) => {
                let _ = reply.send(write_snapshot_opts(&index, &snap, &opts));
            }
            Ok(Control::Stop) | Err(RecvTimeoutError::Disconnected) => return index,
        }
    }
}

fn drain(
    index: &mut Index,
    tailer: &mut LogTailer,
    counters: &Counters,
    path: &Path,
) -> Result<()> {
    for event in tailer.poll()? {
        match event {
            TailEvent::Record { line, rec } => match index.apply(&rec) {
                Ok(()) => {
                    counters.applied.fetch_add(1, Relaxed);
                    counters.applied_seq.store(rec.seq, Relaxed);
                }
                Err(e) => {
                    log::warn!("{}:{line}: seq {} not applied: {e}", path.display(), rec.seq);
                    counters.poisoned.fetch_add(1, Relaxed);
                }
            },
            TailEvent::Malformed { line, detail } => {
                log::warn!("{}:{line}: skipping: {detail}", path.display());
                counters.poisoned.fetch_add(1, Relaxed);
            }
        }
    }
    Ok(())
}
