//! Slot storage and live publication.
//!
//! All payload arrays (embeddings, attributes, bit codes, ids) are
//! preallocated at creation and never move. Every slot carries a seqlock
//! version word: the single writer makes it odd, mutates the slot's cells,
//! then makes it even again with Release ordering. Readers snapshot the
//! version, read, and retry if the version changed or was odd, so a reader
//! observes any item either wholly-old or wholly-new and never a torn mix.
//!
//! Writer and readers are split into two handles. [`Index`] owns the
//! id-to-slot registry and requires `&mut self` for mutation, which makes the
//! single-writer rule a compile-time property. [`Searcher`] is a cheap
//! clonable read handle over the same shared arrays.
//!
//! Deletion only flips the liveness flag; payload cells stay untouched until
//! the slot is reused, and reuse bumps the version before the first write.

use std::collections::HashMap;
use std::sync::atomic::Ordering::{Acquire, Relaxed, Release};
use std::sync::atomic::{fence, AtomicBool, AtomicU32, AtomicU64};
use std::sync::Arc;

use crate::change::{ChangeOp, ChangeRecord};
use crate::config::{IndexConfig, ATTR_SENTINEL};
use crate::error::{Error, Result};
use crate::filter::ClauseStore;
use crate::quantize::OporpParams;

pub(crate) struct EmbeddingStore {
    /// capacity x dim f32 bit patterns.
    cells: Box<[AtomicU32]>,
    dim: usize,
}

impl EmbeddingStore {
    fn new(capacity: usize, dim: usize) -> Self {
        EmbeddingStore { cells: (0..capacity * dim).map(|_| AtomicU32::new(0)).collect(), dim }
    }

    fn write_row(&self, slot: usize, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        let base = slot * self.dim;
        for (i, &v) in row.iter().enumerate() {
            self.cells[base + i].store(v.to_bits(), Relaxed);
        }
    }

    #[inline]
    pub(crate) fn copy_row(&self, slot: usize, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.dim);
        let base = slot * self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = f32::from_bits(self.cells[base + i].load(Relaxed));
        }
    }
}

pub(crate) struct CodeStore {
    cells: Box<[AtomicU64]>,
    words_per_item: usize,
}

impl CodeStore {
    fn new(capacity: usize, words_per_item: usize) -> Self {
        CodeStore {
            cells: (0..capacity * words_per_item).map(|_| AtomicU64::new(0)).collect(),
            words_per_item,
        }
    }

    fn write_row(&self, slot: usize, words: &[u64]) {
        debug_assert_eq!(words.len(), self.words_per_item);
        let base = slot * self.words_per_item;
        for (i, &w) in words.iter().enumerate() {
            self.cells[base + i].store(w, Relaxed);
        }
    }

    #[inline]
    pub(crate) fn copy_row(&self, slot: usize, out: &mut [u64]) {
        debug_assert_eq!(out.len(), self.words_per_item);
        let base = slot * self.words_per_item;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.cells[base + i].load(Relaxed);
        }
    }

    pub(crate) fn words_per_item(&self) -> usize {
        self.words_per_item
    }
}

pub(crate) struct Shared {
    pub(crate) config: IndexConfig,
    pub(crate) oporp: Option<OporpParams>,
    versions: Box<[AtomicU64]>,
    live: Box<[AtomicBool]>,
    ids: Box<[AtomicU64]>,
    pub(crate) embeddings: EmbeddingStore,
    pub(crate) clauses: ClauseStore,
    pub(crate) codes: Option<CodeStore>,
    /// Slots at or above this were never written; scans stop here.
    hwm: AtomicU32,
    live_count: AtomicU64,
    applied_seq: AtomicU64,
}

impl Shared {
    /// Runs `body` under the slot's seqlock and returns its result together
    /// with the version it was consistent at. `None` means the slot is not
    /// live. Retries while the writer holds the slot, so `body` must be
    /// side-effect free or idempotent.
    #[inline]
    pub(crate) fn slot_read_v<T>(
        &self,
        slot: usize,
        mut body: impl FnMut(&Shared) -> T,
    ) -> Option<(T, u64)> {
        let ver = &self.versions[slot];
        loop {
            let v1 = ver.load(Acquire);
            if v1 & 1 == 1 {
                std::hint::spin_loop();
                continue;
            }
            if !self.live[slot].load(Acquire) {
                return None;
            }
            let out = body(self);
            fence(Acquire);
            if ver.load(Relaxed) == v1 {
                return Some((out, v1));
            }
        }
    }

    #[inline]
    pub(crate) fn slot_read<T>(&self, slot: usize, body: impl FnMut(&Shared) -> T) -> Option<T> {
        self.slot_read_v(slot, body).map(|(t, _)| t)
    }

    #[inline]
    pub(crate) fn id_at(&self, slot: usize) -> u64 {
        self.ids[slot].load(Relaxed)
    }

    pub(crate) fn hwm(&self) -> usize {
        self.hwm.load(Acquire) as usize
    }

    pub(crate) fn live_count(&self) -> u64 {
        self.live_count.load(Relaxed)
    }

    pub(crate) fn applied_seq(&self) -> u64 {
        self.applied_seq.load(Acquire)
    }
}

/// Validate an upsert payload against the schema and return its attribute
/// lists sorted and deduplicated. Shared by the index proper and by ingest
/// boundaries that must reject bad payloads before they reach the log.
pub fn normalize_upsert(
    cfg: &IndexConfig,
    embedding: &[f32],
    attrs: &[Vec<u64>],
) -> Result<Vec<Vec<u64>>> {
    if embedding.len() != cfg.dim {
        return Err(Error::DimMismatch { expected: cfg.dim, got: embedding.len() });
    }
    if let Some(i) = embedding.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if attrs.len() != cfg.clauses.len() {
        return Err(Error::ClauseArityMismatch { expected: cfg.clauses.len(), got: attrs.len() });
    }
    let mut norm_attrs: Vec<Vec<u64>> = Vec::with_capacity(attrs.len());
    for (spec, list) in cfg.clauses.iter().zip(attrs) {
        let mut a = list.clone();
        a.sort_unstable();
        a.dedup();
        if a.contains(&ATTR_SENTINEL) {
            return Err(Error::ReservedAttr(ATTR_SENTINEL));
        }
        if a.len() > spec.max_attrs {
            return Err(Error::TooManyAttrs {
                clause: spec.name.clone(),
                max: spec.max_attrs,
                got: a.len(),
            });
        }
        norm_attrs.push(a);
    }
    Ok(norm_attrs)
}

/// A live item exported from the index; slot order preserves scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportRecord {
    pub slot: u32,
    pub id: u64,
    pub embedding: Vec<f32>,
    pub attrs: Vec<Vec<u64>>,
    pub code: Option<Vec<u64>>,
}

/// Writer handle. Exactly one exists per index.
pub struct Index {
    shared: Arc<Shared>,
    id_to_slot: HashMap<u64, u32>,
    /// Freed slots, reused lowest-first to keep the high-water mark tight.
    free: std::collections::BinaryHeap<std::cmp::Reverse<u32>>,
    next_fresh: u32,
}

/// Cloneable read handle; safe to use from any thread while the writer runs.
#[derive(Clone)]
pub struct Searcher {
    pub(crate) shared: Arc<Shared>,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("dim", &self.shared.config.dim)
            .field("capacity", &self.shared.config.capacity)
            .field("live", &self.live_count())
            .field("hwm", &self.high_water_mark())
            .field("applied_seq", &self.applied_seq())
            .finish_non_exhaustive()
    }
}

impl Index {
    pub fn create(config: IndexConfig) -> Result<Index> {
        config.validate()?;
        let oporp = if config.quant_bits > 0 {
            Some(OporpParams::derive(config.dim, config.quant_bits, config.seed)?)
        } else {
            None
        };
        let capacity = config.capacity;
        let codes = oporp
            .as_ref()
            .map(|p| CodeStore::new(capacity, p.words_per_code()));
        let shared = Shared {
            embeddings: EmbeddingStore::new(capacity, config.dim),
            clauses: ClauseStore::new(&config.clauses, capacity),
            codes,
            versions: (0..capacity).map(|_| AtomicU64::new(0)).collect(),
            live: (0..capacity).map(|_| AtomicBool::new(false)).collect(),
            ids: (0..capacity).map(|_| AtomicU64::new(0)).collect(),
            hwm: AtomicU32::new(0),
            live_count: AtomicU64::new(0),
            applied_seq: AtomicU64::new(0),
            oporp,
            config,
        };
        Ok(Index {
            shared: Arc::new(shared),
            id_to_slot: HashMap::new(),
            free: std::collections::BinaryHeap::new(),
            next_fresh: 0,
        })
    }

    pub fn searcher(&self) -> Searcher {
        Searcher { shared: Arc::clone(&self.shared) }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.shared.config
    }

    /// Insert or replace the item `id`. Attribute lists are positional per
    /// the clause schema; they are sorted and deduplicated here. Returns the
    /// slot the item landed in.
    pub fn upsert(&mut self, id: u64, embedding: &[f32], attrs: &[Vec<u64>]) -> Result<u32> {
        let sh = &*self.shared;
        let cfg = &sh.config;
        let norm_attrs = normalize_upsert(cfg, embedding, attrs)?;
        let code = match &sh.oporp {
            Some(p) => Some(p.encode(embedding)?),
            None => None,
        };

        let (slot, is_new) = match self.id_to_slot.get(&id) {
            Some(&s) => (s, false),
            None => {
                let s = if let Some(std::cmp::Reverse(s)) = self.free.pop() {
                    s
                } else if (self.next_fresh as usize) < cfg.capacity {
                    let s = self.next_fresh;
                    self.next_fresh += 1;
                    s
                } else {
                    return Err(Error::CapacityExhausted { capacity: cfg.capacity });
                };
                (s, true)
            }
        };

        let s = slot as usize;
        // Seqlock write: odd version, payload, even version.
        let v = sh.versions[s].load(Relaxed);
        sh.versions[s].store(v + 1, Relaxed);
        fence(Release);
        sh.embeddings.write_row(s, embedding);
        for (ci, list) in norm_attrs.iter().enumerate() {
            sh.clauses.write_row(ci, s, list);
        }
        if let (Some(store), Some(code)) = (&sh.codes, &code) {
            store.write_row(s, code.words());
        }
        sh.ids[s].store(id, Relaxed);
        sh.versions[s].store(v + 2, Release);
        if is_new {
            // Extend the scan range before making the slot visible.
            if slot >= sh.hwm.load(Relaxed) {
                sh.hwm.store(slot + 1, Release);
            }
            sh.live[s].store(true, Release);
            sh.live_count.fetch_add(1, Relaxed);
            self.id_to_slot.insert(id, slot);
        }
        Ok(slot)
    }

    /// Remove `id`. The slot becomes invisible immediately and is recycled by
    /// later upserts. Returns false if the id was not present.
    pub fn delete(&mut self, id: u64) -> bool {
        match self.id_to_slot.remove(&id) {
            Some(slot) => {
                let sh = &*self.shared;
                sh.live[slot as usize].store(false, Release);
                sh.live_count.fetch_sub(1, Relaxed);
                self.free.push(std::cmp::Reverse(slot));
                true
            }
            None => false,
        }
    }

    /// Apply a sequenced record. The seq must strictly advance the last
    /// applied one; replaying an already-applied record is an error the
    /// caller can treat as "skip". The seq advances only when the operation
    /// itself succeeds.
    pub fn apply(&mut self, rec: &ChangeRecord) -> Result<()> {
        let applied = self.shared.applied_seq.load(Relaxed);
        if rec.seq <= applied {
            return Err(Error::SeqRegression { seq: rec.seq, applied });
        }
        match &rec.op {
            ChangeOp::Upsert { id, embedding, attrs } => {
                self.upsert(*id, embedding, attrs)?;
            }
            ChangeOp::Delete { id } => {
                self.delete(*id);
            }
        }
        self.shared.applied_seq.store(rec.seq, Release);
        Ok(())
    }

    /// Overrides the applied-seq watermark; used when restoring a snapshot.
    pub fn set_applied_seq(&mut self, seq: u64) {
        self.shared.applied_seq.store(seq, Release);
    }

    pub fn contains(&self, id: u64) -> bool {
        self.id_to_slot.contains_key(&id)
    }

    pub fn slot_of(&self, id: u64) -> Option<u32> {
        self.id_to_slot.get(&id).copied()
    }

    pub fn live_count(&self) -> u64 {
        self.shared.live_count()
    }

    pub fn high_water_mark(&self) -> u32 {
        self.shared.hwm.load(Relaxed)
    }

    pub fn applied_seq(&self) -> u64 {
        self.shared.applied_seq()
    }

    /// Snapshot of every live item in ascending slot order. Writer-side, so
    /// the view is exact; no concurrent mutation is possible while `&self`
    /// is held.
    pub fn export_live(&self) -> Vec<ExportRecord> {
        let sh = &*self.shared;
        let mut out = Vec::with_capacity(self.id_to_slot.len());
        let mut row = vec![0.0f32; sh.config.dim];
        for slot in 0..self.high_water_mark() as usize {
            if !sh.live[slot].load(Relaxed) {
                continue;
            }
            sh.embeddings.copy_row(slot, &mut row);
            let mut attrs = Vec::with_capacity(sh.config.clauses.len());
            for ci in 0..sh.config.clauses.len() {
                let mut list = Vec::new();
                sh.clauses.read_row(ci, slot, &mut list);
                attrs.push(list);
            }
            let code = sh.codes.as_ref().map(|cs| {
                let mut words = vec![0u64; cs.words_per_item()];
                cs.copy_row(slot, &mut words);
                words
            });
            out.push(ExportRecord {
                slot: slot as u32,
                id: sh.id_at(slot),
                embedding: row.clone(),
                attrs,
                code,
            });
        }
        out
    }

    /// Structural invariants of the registry; test and debug support.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let sh = &*self.shared;
        let hwm = self.high_water_mark() as usize;
        if hwm > sh.config.capacity {
            return Err(format!("hwm {hwm} above capacity"));
        }
        let mut live_slots = std::collections::HashSet::new();
        for slot in 0..sh.config.capacity {
            if sh.live[slot].load(Relaxed) {
                if slot >= hwm {
                    return Err(format!("live slot {slot} at or above hwm {hwm}"));
                }
                live_slots.insert(slot as u32);
            }
        }
        if live_slots.len() != self.id_to_slot.len() {
            return Err(format!(
                "{} live slots vs {} registry entries",
                live_slots.len(),
                self.id_to_slot.len()
            ));
        }
        if live_slots.len() as u64 != sh.live_count.load(Relaxed) {
            return Err("live_count drift".into());
        }
        let mut seen_slots = std::collections::HashSet::new();
        for (&id, &slot) in &self.id_to_slot {
            if !live_slots.contains(&slot) {
                return Err(format!("id {id} maps to dead slot {slot}"));
            }
            if !seen_slots.insert(slot) {
                return Err(format!("slot {slot} mapped twice"));
            }
            let stored = sh.id_at(slot as usize);
            if stored != id {
                return Err(format!("slot {slot} stores id {stored}, registry says {id}"));
            }
        }
        for &std::cmp::Reverse(slot) in self.free.iter() {
            if live_slots.contains(&slot) {
                return Err(format!("free slot {slot} is live"));
            }
            if slot >= self.next_fresh {
                return Err(format!("free slot {slot} beyond fresh frontier"));
            }
        }
        Ok(())
    }
}

impl Searcher {
    pub fn config(&self) -> &IndexConfig {
        &self.shared.config
    }

    pub fn live_count(&self) -> u64 {
        self.shared.live_count()
    }

    pub fn high_water_mark(&self) -> u32 {
        self.shared.hwm.load(Acquire)
    }

    pub fn applied_seq(&self) -> u64 {
        self.shared.applied_seq()
    }

    pub fn quantization_enabled(&self) -> bool {
        self.shared.oporp.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ClauseSpec, Polarity};

    fn config(capacity: usize, dim: usize, quant_bits: usize) -> IndexConfig {
        IndexConfig {
            capacity,
            dim,
            clauses: vec![
                ClauseSpec { name: "a".into(), polarity: Polarity::Match, max_attrs: 4 },
                ClauseSpec { name: "b".into(), polarity: Polarity::ReverseMatch, max_attrs: 2 },
            ],
            quant_bits,
            seed: 5,
            memory_budget_bytes: None,
        }
    }

    fn emb(dim: usize, v: f32) -> Vec<f32> {
        vec![v; dim]
    }

    #[test]
    fn upsert_insert_and_replace() {
        let mut idx = Index::create(config(4, 3, 0)).unwrap();
        let s0 = idx.upsert(10, &emb(3, 1.0), &[vec![1], vec![]]).unwrap();
        let s1 = idx.upsert(11, &emb(3, 2.0), &[vec![2], vec![]]).unwrap();
        assert_eq!((s0, s1), (0, 1));
        assert_eq!(idx.live_count(), 2);
        assert_eq!(idx.high_water_mark(), 2);

        // Replacing keeps the slot and the live count.
        let s0b = idx.upsert(10, &emb(3, 9.0), &[vec![3], vec![7]]).unwrap();
        assert_eq!(s0b, 0);
        assert_eq!(idx.live_count(), 2);
        let recs = idx.export_live();
        assert_eq!(recs[0].embedding, emb(3, 9.0));
        assert_eq!(recs[0].attrs, vec![vec![3], vec![7]]);
        idx.check_invariants().unwrap();
    }

    #[test]
    fn delete_frees_and_reuses_lowest_slot() {
        let mut idx = Index::create(config(4, 2, 0)).unwrap();
        for id in 0..3 {
            idx.upsert(id, &emb(2, id as f32), &[vec![], vec![]]).unwrap();
        }
        assert!(idx.delete(1));
        assert!(idx.delete(0));
        assert!(!idx.delete(99));
        assert_eq!(idx.live_count(), 1);
        // hwm does not shrink.
        assert_eq!(idx.high_water_mark(), 3);
        let s = idx.upsert(50, &emb(2, 5.0), &[vec![], vec![]]).unwrap();
        assert_eq!(s, 0);
        let s = idx.upsert(51, &emb(2, 6.0), &[vec![], vec![]]).unwrap();
        assert_eq!(s, 1);
        idx.check_invariants().unwrap();
    }

    #[test]
    fn capacity_exhaustion() {
        let mut idx = Index::create(config(2, 2, 0)).unwrap();
        idx.upsert(1, &emb(2, 1.0), &[vec![], vec![]]).unwrap();
        idx.upsert(2, &emb(2, 2.0), &[vec![], vec![]]).unwrap();
        assert!(matches!(
            idx.upsert(3, &emb(2, 3.0), &[vec![], vec![]]),
            Err(Error::CapacityExhausted { capacity: 2 })
        ));
        // Replacement still works at capacity, as does delete-then-insert.
        idx.upsert(1, &emb(2, 9.0), &[vec![], vec![]]).unwrap();
        idx.delete(2);
        idx.upsert(3, &emb(2, 3.0), &[vec![], vec![]]).unwrap();
        idx.check_invariants().unwrap();
    }

    #[test]
    fn upsert_validation_errors() {
        let mut idx = Index::create(config(4, 3, 0)).unwrap();
        assert!(matches!(
            idx.upsert(1, &emb(2, 0.0), &[vec![], vec![]]),
            Err(Error::DimMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            idx.upsert(1, &[0.0, f32::INFINITY, 0.0], &[vec![], vec![]]),
            Err(Error::NonFinite(1))
        ));
        assert!(matches!(
            idx.upsert(1, &emb(3, 0.0), &[vec![]]),
            Err(Error::ClauseArityMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            idx.upsert(1, &emb(3, 0.0), &[vec![1, 2, 3, 4, 5], vec![]]),
            Err(Error::TooManyAttrs { .. })
        ));
        assert!(matches!(
            idx.upsert(1, &emb(3, 0.0), &[vec![ATTR_SENTINEL], vec![]]),
            Err(Error::ReservedAttr(_))
        ));
        // Duplicates collapse before the budget check.
        idx.upsert(1, &emb(3, 0.0), &[vec![7, 7, 7, 7, 7], vec![]]).unwrap();
        assert_eq!(idx.export_live()[0].attrs[0], vec![7]);
    }

    #[test]
    fn apply_enforces_seq_order() {
        let mut idx = Index::create(config(4, 2, 0)).unwrap();
        idx.apply(&ChangeRecord::upsert(5, 1, emb(2, 1.0), vec![vec![], vec![]])).unwrap();
        assert_eq!(idx.applied_seq(), 5);
        assert!(matches!(
            idx.apply(&ChangeRecord::delete(5, 1)),
            Err(Error::SeqRegression { seq: 5, applied: 5 })
        ));
        assert!(matches!(
            idx.apply(&ChangeRecord::delete(4, 1)),
            Err(Error::SeqRegression { .. })
        ));
        idx.apply(&ChangeRecord::delete(6, 1)).unwrap();
        assert_eq!(idx.applied_seq(), 6);
        assert_eq!(idx.live_count(), 0);
        // A failing op does not advance the watermark.
        assert!(idx.apply(&ChangeRecord::upsert(7, 2, emb(9, 0.0), vec![vec![], vec![]])).is_err());
        assert_eq!(idx.applied_seq(), 6);
    }

    #[test]
    fn codes_follow_embeddings() {
        let mut idx = Index::create(config(4, 8, 64)).unwrap();
        idx.upsert(1, &[1.0, -2.0, 0.5, 3.0, -1.0, 0.25, -0.125, 2.0], &[vec![], vec![]])
            .unwrap();
        let rec = &idx.export_live()[0];
        let expect = idx
            .shared
            .oporp
            .as_ref()
            .unwrap()
            .encode(&rec.embedding)
            .unwrap();
        assert_eq!(rec.code.as_deref().unwrap(), expect.words());
    }

    #[test]
    fn searcher_sees_writer_state() {
        let mut idx = Index::create(config(8, 2, 0)).unwrap();
        let searcher = idx.searcher();
        assert_eq!(searcher.live_count(), 0);
        idx.upsert(1, &emb(2, 1.0), &[vec![], vec![]]).unwrap();
        idx.upsert(2, &emb(2, 2.0), &[vec![], vec![]]).unwrap();
        assert_eq!(searcher.live_count(), 2);
        assert_eq!(searcher.high_water_mark(), 2);
        let got = searcher
            .shared
            .slot_read(0, |sh| {
                let mut row = vec![0.0; 2];
                sh.embeddings.copy_row(0, &mut row);
                (sh.id_at(0), row)
            })
            .unwrap();
        assert_eq!(got, (1, vec![1.0, 1.0]));
        idx.delete(1);
        assert!(searcher.shared.slot_read(0, |_| ()).is_none());
    }
}
