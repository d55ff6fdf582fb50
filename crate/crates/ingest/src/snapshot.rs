//! Binary snapshot of a live index, for warm starts.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      "LNRS"
//! version    u32 (currently 1)
//! count      u64   live items
//! dim        u32
//! quant_bits u32
//! precision  u8    0 = f32 embeddings, 1 = f16 (widened on load)
//! clauses    u16, then per clause: max_attrs u32, polarity u8
//!            (0 match, 1 reverse_match), name len u16 + UTF-8
//! watermark  u64   seq of the last applied change record
//! sections, in this order:
//!   ids         count x u64
//!   embeddings  count x dim x f32 (or x u16 when precision = 1), row-major
//!   per clause: matrix count x max_attrs x u64, sentinel-padded,
//!               then counts count x u32
//!   codes       count x (quant_bits/64) x u64, only when quant_bits > 0
//!   weights_ref u16 len + UTF-8, possibly empty
//! ```
//!
//! Tombstoned slots are not written (compaction), so slot numbers are not
//! preserved across a round trip; logical state (live items, watermark) is.
//! Codes are validated on load by re-encoding each embedding, which catches
//! a config seed that differs from the one the snapshot was built with.

use std::path::{Path, PathBuf};

use linr_core::{ClauseSpec, Index, IndexConfig, OporpParams, Polarity, ATTR_SENTINEL};

use crate::error::{IngestError, Result};

const MAGIC: &[u8; 4] = b"LNRS";
const VERSION: u32 = 1;

/// Embedding storage width. F16 halves the snapshot's embedding section at a
/// worst-case relative error of 2^-11 per coordinate; codes stored alongside
/// are computed from the rounded values, so the file stays self-consistent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F16,
}

pub struct SnapshotOptions {
    pub precision: Precision,
    /// Name of a weights file (LNRW) the scorer should load, or empty.
    pub weights_ref: String,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        SnapshotOptions { precision: Precision::F32, weights_ref: String::new() }
    }
}

/// Header fields plus the trailing weights reference, without the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMeta {
    pub version: u32,
    pub count: u64,
    pub dim: u32,
    pub quant_bits: u32,
    pub precision: Precision,
    pub clauses: Vec<ClauseSpec>,
    pub watermark: u64,
    pub weights_ref: String,
}

/// Write a snapshot with default options (f32, no weights reference).
/// Returns the seq watermark captured in the file.
pub fn write_snapshot(index: &Index, path: &Path) -> Result<u64> {
    write_snapshot_opts(index, path, &SnapshotOptions::default())
}

/// Write a snapshot. The caller must guarantee no concurrent upsert/delete
/// (quiesce the updator); readers may keep querying. The write goes to a
/// temp file first and is renamed into place, so a crash never leaves a
/// half-written snapshot at `path`. Byte-deterministic for a given state.
pub fn write_snapshot_opts(index: &Index, path: &Path, opts: &SnapshotOptions) -> Result<u64> {
    let cfg = index.config();
    let exports = index.export_live();
    let watermark = index.applied_seq();

    let params = match (opts.precision, cfg.quant_bits) {
        (Precision::F16, bits) if bits > 0 => {
            Some(OporpParams::derive(cfg.dim, bits, cfg.seed)?)
        }
        _ => None,
    };

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u64(&mut buf, exports.len() as u64);
    put_u32(&mut buf, cfg.dim as u32);
    put_u32(&mut buf, cfg.quant_bits as u32);
    buf.push(match opts.precision {
        Precision::F32 => 0,
        Precision::F16 => 1,
    });
    put_u16(&mut buf, cfg.clauses.len() as u16);
    for spec in &cfg.clauses {
        put_u32(&mut buf, spec.max_attrs as u32);
        buf.push(match spec.polarity {
            Polarity::Match => 0,
            Polarity::ReverseMatch => 1,
        });
        put_u16(&mut buf, spec.name.len() as u16);
        buf.extend_from_slice(spec.name.as_bytes());
    }
    put_u64(&mut buf, watermark);

    for rec in &exports {
        put_u64(&mut buf, rec.id);
    }

    // Rounded embeddings are kept when writing f16 so codes below can be
    // recomputed from exactly the values a loader will see.
    let mut rounded: Vec<Vec<f32>> = Vec::new();
    match opts.precision {
        Precision::F32 => {
            for rec in &exports {
                for &v in &rec.embedding {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Precision::F16 => {
            for rec in &exports {
                let mut row = Vec::with_capacity(rec.embedding.len());
                for (i, &v) in rec.embedding.iter().enumerate() {
                    let h = f32_to_f16(v);
                    let w = f16_to_f32(h);
                    if !w.is_finite() {
                        return Err(IngestError::Corrupt {
                            path: path.to_path_buf(),
                            detail: format!(
                                "id {} coordinate {i} value {v} exceeds f16 range",
                                rec.id
                            ),
                        });
                    }
                    buf.extend_from_slice(&h.to_le_bytes());
                    row.push(w);
                }
                rounded.push(row);
            }
        }
    }

    for (ci, spec) in cfg.clauses.iter().enumerate() {
        for rec in &exports {
            let list = &rec.attrs[ci];
            for &a in list {
                put_u64(&mut buf, a);
            }
            for _ in list.len()..spec.max_attrs {
                put_u64(&mut buf, ATTR_SENTINEL);
            }
        }
        for rec in &exports {
            put_u32(&mut buf, rec.attrs[ci].len() as u32);
        }
    }

    if cfg.quant_bits > 0 {
        match &params {
            Some(p) => {
                for row in &rounded {
                    let code = p.encode(row)?;
                    for &w in code.words() {
                        put_u64(&mut buf, w);
                    }
                }
            }
            None => {
                for rec in &exports {
                    for &w in rec.code.as_deref().expect("quantization enabled but no code") {
                        put_u64(&mut buf, w);
                    }
                }
            }
        }
    }

    put_u16(&mut buf, opts.weights_ref.len() as u16);
    buf.extend_from_slice(opts.weights_ref.as_bytes());

    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    std::fs::write(&tmp, &buf).map_err(|e| IngestError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))?;
    Ok(watermark)
}

/// Load a snapshot into a fresh index built from `cfg`. The config must
/// agree with the file on dim, quant_bits, and the clause schema; item count
/// must fit the capacity. Stored codes must match re-encoding. Any failure
/// leaves no partial index behind.
pub fn load_snapshot(path: &Path, cfg: &IndexConfig) -> Result<Index> {
    load_snapshot_with_meta(path, cfg).map(|(index, _)| index)
}

/// [`load_snapshot`], also returning the parsed header and weights
/// reference.
pub fn load_snapshot_with_meta(path: &Path, cfg: &IndexConfig) -> Result<(Index, SnapshotMeta)> {
    cfg.validate().map_err(IngestError::Core)?;
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let mut cur = Cursor { buf: &bytes, pos: 0, path };

    let (mut meta, precision) = read_header(&mut cur)?;
    check_schema(&meta, cfg)?;
    if meta.count as usize > cfg.capacity {
        return Err(IngestError::SchemaMismatch {
            field: "capacity",
            snapshot: format!("{} items", meta.count),
            config: format!("{} slots", cfg.capacity),
        });
    }
    let count = meta.count as usize;
    let dim = cfg.dim;

    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(cur.u64("ids")?);
    }

    let mut embeddings: Vec<Vec<f32>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row = Vec::with_capacity(dim);
        match precision {
            Precision::F32 => {
                for _ in 0..dim {
                    row.push(f32::from_le_bytes(cur.arr::<4>("embeddings")?));
                }
            }
            Precision::F16 => {
                for _ in 0..dim {
                    row.push(f16_to_f32(u16::from_le_bytes(cur.arr::<2>("embeddings")?)));
                }
            }
        }
        embeddings.push(row);
    }

    let mut attrs: Vec<Vec<Vec<u64>>> = vec![Vec::with_capacity(cfg.clauses.len()); count];
    for spec in &cfg.clauses {
        let mut rows: Vec<Vec<u64>> = Vec::with_capacity(count);
        for _ in 0..count {
            let mut row = Vec::new();
            let mut padding = false;
            for _ in 0..spec.max_attrs {
                let a = cur.u64("attributes")?;
                if a == ATTR_SENTINEL {
                    padding = true;
                } else if padding {
                    return Err(cur.corrupt("attribute after sentinel padding"));
                } else if row.last().is_some_and(|&p| p >= a) {
                    return Err(cur.corrupt("attribute row not strictly increasing"));
                } else {
                    row.push(a);
                }
            }
            rows.push(row);
        }
        for (i, row) in rows.iter().enumerate() {
            let stored = cur.u32("attribute counts")?;
            if stored as usize != row.len() {
                return Err(cur.corrupt(&format!(
                    "attribute count {stored} disagrees with matrix row of {} for item {i}",
                    row.len()
                )));
            }
        }
        for (item, row) in attrs.iter_mut().zip(rows) {
            item.push(row);
        }
    }

    let words = cfg.quant_bits / 64;
    let mut codes: Vec<Vec<u64>> = Vec::new();
    if cfg.quant_bits > 0 {
        for _ in 0..count {
            let mut row = Vec::with_capacity(words);
            for _ in 0..words {
                row.push(cur.u64("codes")?);
            }
            codes.push(row);
        }
    }

    meta.weights_ref = cur.string("weights reference")?;
    if cur.pos != bytes.len() {
        return Err(cur.corrupt(&format!("{} trailing bytes", bytes.len() - cur.pos)));
    }

    let params = if cfg.quant_bits > 0 {
        Some(OporpParams::derive(cfg.dim, cfg.quant_bits, cfg.seed)?)
    } else {
        None
    };

    let mut index = Index::create(cfg.clone())?;
    let mut seen = std::collections::HashSet::with_capacity(count);
    for (i, id) in ids.iter().enumerate() {
        if !seen.insert(*id) {
            return Err(cur.corrupt(&format!("duplicate id {id}")));
        }
        if let Some(p) = &params {
            let code = p.encode(&embeddings[i])?;
            if code.words() != codes[i].as_slice() {
                return Err(IngestError::CodeMismatch { id: *id });
            }
        }
        index.upsert(*id, &embeddings[i], &attrs[i])?;
    }
    index.set_applied_seq(meta.watermark);
    Ok((index, meta))
}

/// Read header fields and the weights reference without touching payloads.
pub fn read_snapshot_meta(path: &Path) -> Result<SnapshotMeta> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let mut cur = Cursor { buf: &bytes, pos: 0, path };
    let (mut meta, precision) = read_header(&mut cur)?;

    let count = meta.count as usize;
    let emb_width = match precision {
        Precision::F32 => 4,
        Precision::F16 => 2,
    };
    let attr_bytes: usize =
        meta.clauses.iter().map(|c| count * (c.max_attrs * 8 + 4)).sum();
    let skip = count * 8
        + count * meta.dim as usize * emb_width
        + attr_bytes
        + count * (meta.quant_bits as usize / 64) * 8;
    cur.take(skip, "sections")?;
    meta.weights_ref = cur.string("weights reference")?;
    Ok(meta)
}

fn read_header(cur: &mut Cursor) -> Result<(SnapshotMeta, Precision)> {
    let magic = cur.arr::<4>("magic")?;
    if &magic != MAGIC {
        return Err(IngestError::BadMagic { path: cur.path.to_path_buf(), expected: "LNRS" });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(IngestError::UnsupportedVersion {
            path: cur.path.to_path_buf(),
            got: version,
            supported: VERSION,
        });
    }
    let count = cur.u64("count")?;
    let dim = cur.u32("dim")?;
    let quant_bits = cur.u32("quant_bits")?;
    let precision = match cur.u8("precision")? {
        0 => Precision::F32,
        1 => Precision::F16,
        p => return Err(cur.corrupt(&format!("unknown precision {p}"))),
    };
    let n_clauses = cur.u16("clause table")?;
    let mut clauses = Vec::with_capacity(n_clauses as usize);
    for _ in 0..n_clauses {
        let max_attrs = cur.u32("clause table")? as usize;
        let polarity = match cur.u8("clause table")? {
            0 => Polarity::Match,
            1 => Polarity::ReverseMatch,
            p => return Err(cur.corrupt(&format!("unknown polarity {p}"))),
        };
        let name = cur.string("clause table")?;
        clauses.push(ClauseSpec { name, polarity, max_attrs });
    }
    let watermark = cur.u64("watermark")?;
    let meta = SnapshotMeta {
        version,
        count,
        dim,
        quant_bits,
        precision,
        clauses,
        watermark,
        weights_ref: String::new(),
    };
    Ok((meta, precision))
}

fn check_schema(meta: &SnapshotMeta, cfg: &IndexConfig) -> Result<()> {
    let err = |field, snapshot: String, config: String| {
        Err(IngestError::SchemaMismatch { field, snapshot, config })
    };
    if meta.dim as usize != cfg.dim {
        return err("dim", meta.dim.to_string(), cfg.dim.to_string());
    }
    if meta.quant_bits as usize != cfg.quant_bits {
        return err("quant_bits", meta.quant_bits.to_string(), cfg.quant_bits.to_string());
    }
    if meta.clauses.len() != cfg.clauses.len() {
        return err("clause count", meta.clauses.len().to_string(), cfg.clauses.len().to_string());
    }
    for (s, c) in meta.clauses.iter().zip(&cfg.clauses) {
        if s.name != c.name {
            return err("clause name", format!("{:?}", s.name), format!("{:?}", c.name));
        }
        if s.polarity != c.polarity {
            return err("clause polarity", format!("{:?}", s.polarity), format!("{:?}", c.polarity));
        }
        if s.max_attrs != c.max_attrs {
            return err("clause max_attrs", s.max_attrs.to_string(), c.max_attrs.to_string());
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(IngestError::Truncated { path: self.path.to_path_buf(), section });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn arr<const N: usize>(&mut self, section: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, section)?.try_into().unwrap())
    }

    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.arr::<2>(section)?))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr::<4>(section)?))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr::<8>(section)?))
    }

    fn string(&mut self, section: &'static str) -> Result<String> {
        let len = self.u16(section)? as usize;
        let bytes = self.take(len, section)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("string not UTF-8"))
    }

    fn corrupt(&self, detail: &str) -> IngestError {
        IngestError::Corrupt { path: self.path.to_path_buf(), detail: detail.into() }
    }
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Widen an IEEE 754 binary16 to f32. Exact for every finite input.
pub fn f16_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = (h >> 10) & 0x1f;
    let frac = (h & 0x3ff) as u32;
    let bits = match (exp, frac) {
        (0, 0) => sign,
        (0, _) => {
            // Subnormal: shift the leading 1 into the implicit position.
            let shift = frac.leading_zeros() - 21;
            let mant = (frac << shift) & 0x3ff;
            sign | ((113 - shift) << 23) | (mant << 13)
        }
        (0x1f, 0) => sign | 0x7f80_0000,
        (0x1f, _) => sign | 0x7f80_0000 | (frac << 13),
        _ => sign | ((exp as u32 + 112) << 23) | (frac << 13),
    };
    f32::from_bits(bits)
}

/// Narrow an f32 to IEEE 754 binary16 with round-to-nearest-even. Values
/// beyond the f16 range become infinities.
pub fn f32_to_f16(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let frac = bits & 0x007f_ffff;
    if exp == 0xff {
        let payload = if frac != 0 { 0x200 | (frac >> 13) as u16 } else { 0 };
        return sign | 0x7c00 | payload;
    }
    let e = exp - 127 + 15;
    if e >= 0x1f {
        return sign | 0x7c00;
    }
    let (mant, shift) = if e <= 0 {
        if e < -10 {
            return sign;
        }
        (frac | 0x0080_0000, (14 - e) as u32)
    } else {
        (((e as u32) << 23) | frac, 13)
    };
    let half = mant >> shift;
    let rem = mant & ((1 << shift) - 1);
    let midpoint = 1 << (shift - 1);
    let rounded = match rem.cmp(&midpoint) {
        std::cmp::Ordering::Less => half,
        std::cmp::Ordering::Greater => half + 1,
        // Ties to even; a carry past the exponent field lands on the
        // adjacent representation, which is correct for this layout.
        std::cmp::Ordering::Equal => half + (half & 1),
    };
    sign | rounded as u16
}
