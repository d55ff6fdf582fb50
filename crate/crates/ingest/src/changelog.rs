//! Append-only change log: line-delimited JSON, one record per line.
//!
//! Wire shape:
//!
//! ```json
//! {"seq":7, "kind":"upsert", "id":42, "emb":[0.1, -0.2], "attrs":{"topic":[3,9]}}
//! {"seq":8, "kind":"delete", "id":42}
//! ```
//!
//! `attrs` is keyed by clause name; a clause absent from the map means an
//! empty list. In-memory records keep attribute lists positional in schema
//! order, so the schema is needed at both serialization boundaries.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use linr_core::{normalize_upsert, ChangeOp, ChangeRecord, IndexConfig};
use serde::{Deserialize, Serialize};

use crate::error::{IngestError, Result};

#[derive(Serialize, Deserialize, PartialEq, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum WireKind {
    Upsert,
    Delete,
}

/// One log line. `emb` and `attrs` are present exactly when kind is upsert.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    seq: u64,
    kind: WireKind,
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attrs: Option<BTreeMap<String, Vec<u64>>>,
}

/// Serialize a record to one log line (no trailing newline). Non-finite
/// embedding values must be rejected before this point; JSON cannot carry
/// them.
pub fn encode_record(rec: &ChangeRecord, cfg: &IndexConfig) -> Result<String> {
    let wire = match &rec.op {
        ChangeOp::Upsert { id, embedding, attrs } => {
            let mut map = BTreeMap::new();
            for (spec, list) in cfg.clauses.iter().zip(attrs) {
                if !list.is_empty() {
                    map.insert(spec.name.clone(), list.clone());
                }
            }
            WireRecord {
                seq: rec.seq,
                kind: WireKind::Upsert,
                id: *id,
                emb: Some(embedding.clone()),
                attrs: Some(map),
            }
        }
        ChangeOp::Delete { id } => {
            WireRecord { seq: rec.seq, kind: WireKind::Delete, id: *id, emb: None, attrs: None }
        }
    };
    serde_json::to_string(&wire).map_err(|e| IngestError::Malformed { line: 0, detail: e.to_string() })
}

/// Parse one log line. `line_no` is used only for error context.
pub fn decode_record(line: &str, cfg: &IndexConfig, line_no: u64) -> Result<ChangeRecord> {
    let malformed = |detail: String| IngestError::Malformed { line: line_no, detail };
    let wire: WireRecord =
        serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    match wire.kind {
        WireKind::Upsert => {
            let emb = wire.emb.ok_or_else(|| malformed("upsert without emb".into()))?;
            let mut named = wire.attrs.unwrap_or_default();
            let mut positional = Vec::with_capacity(cfg.clauses.len());
            for spec in &cfg.clauses {
                positional.push(named.remove(&spec.name).unwrap_or_default());
            }
            if let Some(unknown) = named.into_keys().next() {
                return Err(malformed(format!("unknown clause {unknown:?}")));
            }
            Ok(ChangeRecord::upsert(wire.seq, wire.id, emb, positional))
        }
        WireKind::Delete => {
            if wire.emb.is_some() || wire.attrs.is_some() {
                return Err(malformed("delete carries upsert fields".into()));
            }
            Ok(ChangeRecord::delete(wire.seq, wire.id))
        }
    }
}

/// Single appender for a change log. Owns seq assignment: every append gets
/// the next seq, so the file is strictly increasing by construction.
///
/// Opening scans the existing file to recover the last assigned seq. A torn
/// final line (no trailing newline, from a crash mid-write) is truncated
/// away; complete lines that fail to parse are kept (the lenient readers
/// skip them) but still logged here.
pub struct LogWriter {
    file: File,
    path: PathBuf,
    cfg: IndexConfig,
    next_seq: u64,
}

impl LogWriter {
    pub fn open(path: &Path, cfg: &IndexConfig) -> Result<LogWriter> {
        // O_APPEND: every write lands at end-of-file even if other handles
        // touch the file, so a stray reader or the tailer can never race the
        // writer's position.
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| IngestError::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| IngestError::io(path, e))?;

        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < bytes.len() {
            log::warn!(
                "{}: dropping {} bytes of torn final line",
                path.display(),
                bytes.len() - complete
            );
            file.set_len(complete as u64).map_err(|e| IngestError::io(path, e))?;
        }

        let mut last_seq = 0u64;
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let text = String::from_utf8_lossy(line);
            match decode_record(&text, cfg, i as u64 + 1) {
                Ok(rec) => last_seq = last_seq.max(rec.seq),
                Err(e) => log::warn!("{}: skipping unreadable line: {e}", path.display()),
            }
        }

        Ok(LogWriter { file, path: path.to_path_buf(), cfg: cfg.clone(), next_seq: last_seq + 1 })
    }

    /// Seq the next append will receive.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Validate, assign a seq, and append an upsert. The logged attribute
    /// lists are the normalized (sorted, deduplicated) ones, so the log is
    /// canonical. Returns the assigned seq.
    pub fn append_upsert(&mut self, id: u64, embedding: &[f32], attrs: &[Vec<u64>]) -> Result<u64> {
        let norm = normalize_upsert(&self.cfg, embedding, attrs)?;
        let rec = ChangeRecord::upsert(self.next_seq, id, embedding.to_vec(), norm);
        self.write_line(&rec)
    }

    /// Assign a seq and append a delete. Returns the assigned seq.
    pub fn append_delete(&mut self, id: u64) -> Result<u64> {
        let rec = ChangeRecord::delete(self.next_seq, id);
        self.write_line(&rec)
    }

    fn write_line(&mut self, rec: &ChangeRecord) -> Result<u64> {
        let mut line = encode_record(rec, &self.cfg)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| IngestError::io(&self.path, e))?;
        self.next_seq = rec.seq + 1;
        Ok(rec.seq)
    }

    /// Force written records to stable storage.
    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_data().map_err(|e| IngestError::io(&self.path, e))
    }
}

/// Strict batch reader: every line must parse and seqs must strictly
/// increase. A missing file reads as empty; an unterminated final line is a
/// truncation error. Use this for oracles and tooling; the live pipeline
/// uses the lenient [`LogTailer`].
pub fn read_log(path: &Path, cfg: &IndexConfig) -> Result<Vec<ChangeRecord>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(IngestError::io(path, e)),
    };
    if !bytes.is_empty() && *bytes.last().unwrap() != b'\n' {
        return Err(IngestError::Truncated { path: path.to_path_buf(), section: "final log line" });
    }
    let mut out = Vec::new();
    let mut prev: Option<u64> = None;
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let line_no = i as u64 + 1;
        let text = std::str::from_utf8(line)
            .map_err(|e| IngestError::Malformed { line: line_no, detail: e.to_string() })?;
        let rec = decode_record(text, cfg, line_no)?;
        if let Some(p) = prev {
            if rec.seq <= p {
                return Err(IngestError::SeqOrder { line: line_no, seq: rec.seq, prev: p });
            }
        }
        prev = Some(rec.seq);
        out.push(rec);
    }
    Ok(out)
}

/// A tailed log event: either a parsed record or a line that could not be
/// parsed (poison). Order matches the file; `line` is 1-based.
#[derive(Debug)]
pub enum TailEvent {
    Record { line: u64, rec: ChangeRecord },
    Malformed { line: u64, detail: String },
}

/// Incremental log reader. Tracks a byte offset and consumes only complete
/// (newline-terminated) lines, so a record being written concurrently is
/// never seen half-done; its bytes stay pending until the newline lands.
pub struct LogTailer {
    path: PathBuf,
    cfg: IndexConfig,
    offset: u64,
    line_no: u64,
}

impl LogTailer {
    /// Start tailing at `offset` with `lines_consumed` lines already read
    /// (both zero for a fresh log; bootstrap hands over its position).
    pub fn new(path: &Path, cfg: &IndexConfig, offset: u64, lines_consumed: u64) -> LogTailer {
        LogTailer { path: path.to_path_buf(), cfg: cfg.clone(), offset, line_no: lines_consumed }
    }

    /// First byte not yet consumed.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Complete lines consumed so far, counting from the start of the file.
    pub fn lines_consumed(&self) -> u64 {
        self.line_no
    }

    /// Read everything new since the last poll. A missing file is an empty
    /// poll, not an error: the writer may simply not have started yet.
    pub fn poll(&mut self) -> Result<Vec<TailEvent>> {
        let mut file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(IngestError::io(&self.path, e)),
        };
        file.seek(SeekFrom::Start(self.offset)).map_err(|e| IngestError::io(&self.path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| IngestError::io(&self.path, e))?;

        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => return Ok(Vec::new()),
        };
        let mut events = Vec::new();
        for line in bytes[..complete].split_inclusive(|&b| b == b'\n') {
            self.line_no += 1;
            let trimmed = &line[..line.len() - 1];
            if trimmed.is_empty() {
                continue;
            }
            let text = String::from_utf8_lossy(trimmed);
            match decode_record(&text, &self.cfg, self.line_no) {
                Ok(rec) => events.push(TailEvent::Record { line: self.line_no, rec }),
                Err(e) => {
                    events.push(TailEvent::Malformed { line: self.line_no, detail: e.to_string() })
                }
            }
        }
        self.offset += complete as u64;
        Ok(events)
    }
}
