//! Attribute clauses and their evaluation.
//!
//! Each clause stores a fixed-width row of sorted u64 attributes per slot,
//! padded with [`ATTR_SENTINEL`]. A query supplies one sorted list per
//! clause; a slot passes a `Match` clause when the lists intersect, a
//! `ReverseMatch` clause when they do not, and any clause whose query list is
//! empty. A slot passes the whole filter only if it passes every clause.
//!
//! Rows live in atomic cells so readers may scan while the writer updates.
//! Cross-cell consistency comes from the per-slot seqlock in `index`; the
//! loads here are Relaxed on purpose.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering::Relaxed};

use crate::config::{ClauseSpec, Polarity, ATTR_SENTINEL};
use crate::error::{Error, Result};
use crate::mask::BitMask;

/// Normalized per-query filter: one attribute list per clause in schema
/// order, each sorted and deduplicated. An all-empty filter matches
/// everything.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct QueryFilter {
    clauses: Vec<Vec<u64>>,
}

impl QueryFilter {
    pub fn new(mut clauses: Vec<Vec<u64>>) -> Self {
        for list in &mut clauses {
            list.sort_unstable();
            list.dedup();
        }
        QueryFilter { clauses }
    }

    /// Filter with an empty list for every clause; passes every item.
    pub fn match_all(n_clauses: usize) -> Self {
        QueryFilter { clauses: vec![Vec::new(); n_clauses] }
    }

    pub fn clauses(&self) -> &[Vec<u64>] {
        &self.clauses
    }

    pub fn validate(&self, specs: &[ClauseSpec]) -> Result<()> {
        if self.clauses.len() != specs.len() {
            return Err(Error::FilterArityMismatch {
                expected: specs.len(),
                got: self.clauses.len(),
            });
        }
        for list in &self.clauses {
            if list.contains(&ATTR_SENTINEL) {
                return Err(Error::ReservedAttr(ATTR_SENTINEL));
            }
        }
        Ok(())
    }
}

struct ClauseColumn {
    /// capacity x max_attrs attribute cells, sentinel-padded, sorted per row.
    attrs: Box<[AtomicU64]>,
    /// Real attribute count per slot.
    counts: Box<[AtomicU32]>,
    max_attrs: usize,
}

/// Attribute storage for every clause of an index.
pub(crate) struct ClauseStore {
    specs: Vec<ClauseSpec>,
    columns: Vec<ClauseColumn>,
}

impl ClauseStore {
    pub(crate) fn new(specs: &[ClauseSpec], capacity: usize) -> Self {
        let columns = specs
            .iter()
            .map(|s| ClauseColumn {
                attrs: (0..capacity * s.max_attrs).map(|_| AtomicU64::new(ATTR_SENTINEL)).collect(),
                counts: (0..capacity).map(|_| AtomicU32::new(0)).collect(),
                max_attrs: s.max_attrs,
            })
            .collect();
        ClauseStore { specs: specs.to_vec(), columns }
    }

    /// Writer-only. `attrs` must be sorted, deduplicated, within budget.
    pub(crate) fn write_row(&self, clause: usize, slot: usize, attrs: &[u64]) {
        let col = &self.columns[clause];
        debug_assert!(attrs.len() <= col.max_attrs);
        let base = slot * col.max_attrs;
        for (i, cell) in col.attrs[base..base + col.max_attrs].iter().enumerate() {
            cell.store(attrs.get(i).copied().unwrap_or(ATTR_SENTINEL), Relaxed);
        }
        col.counts[slot].store(attrs.len() as u32, Relaxed);
    }

    pub(crate) fn read_row(&self, clause: usize, slot: usize, out: &mut Vec<u64>) {
        let col = &self.columns[clause];
        let n = col.counts[slot].load(Relaxed) as usize;
        let base = slot * col.max_attrs;
        out.clear();
        out.extend(col.attrs[base..base + n].iter().map(|c| c.load(Relaxed)));
    }

    /// One clause against one slot. `query` must be sorted; empty passes.
    #[inline]
    pub(crate) fn slot_passes_clause(&self, clause: usize, slot: usize, query: &[u64]) -> bool {
        if query.is_empty() {
            return true;
        }
        let col = &self.columns[clause];
        let n = col.counts[slot].load(Relaxed) as usize;
        let base = slot * col.max_attrs;
        // Linear merge over two sorted lists, stopping at the first overlap.
        let mut found = false;
        let mut i = 0;
        let mut qi = 0;
        while i < n && qi < query.len() {
            let a = col.attrs[base + i].load(Relaxed);
            match a.cmp(&query[qi]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => qi += 1,
                std::cmp::Ordering::Equal => {
                    found = true;
                    break;
                }
            }
        }
        match self.specs[clause].polarity {
            Polarity::Match => found,
            Polarity::ReverseMatch => !found,
        }
    }

    /// All clauses of `filter` against one slot.
    #[inline]
    pub(crate) fn slot_passes(&self, filter: &QueryFilter, slot: usize) -> bool {
        filter
            .clauses()
            .iter()
            .enumerate()
            .all(|(ci, q)| self.slot_passes_clause(ci, slot, q))
    }

    /// Mask of slots `0..upto` passing a single clause. Ignores liveness and
    /// versioning; meant for quiesced inspection and tests. The query pipelines
    /// evaluate per slot under the seqlock instead.
    pub(crate) fn eval_clause(&self, clause: usize, query: &[u64], upto: usize) -> BitMask {
        let mut mask = BitMask::zeros(upto);
        for slot in 0..upto {
            if self.slot_passes_clause(clause, slot, query) {
                mask.set(slot);
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(name: &str, polarity: Polarity, max_attrs: usize) -> ClauseSpec {
        ClauseSpec { name: name.into(), polarity, max_attrs }
    }

    fn store(polarity: Polarity, rows: &[&[u64]]) -> ClauseStore {
        let s = ClauseStore::new(&[spec("c", polarity, 8)], rows.len());
        for (slot, row) in rows.iter().enumerate() {
            let mut sorted = row.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            s.write_row(0, slot, &sorted);
        }
        s
    }

    #[test]
    fn query_filter_normalizes() {
        let f = QueryFilter::new(vec![vec![9, 3, 3, 7]]);
        assert_eq!(f.clauses(), &[vec![3, 7, 9]]);
    }

    #[test]
    fn match_polarity_basic() {
        let s = store(Polarity::Match, &[&[3, 7], &[9], &[]]);
        assert!(s.slot_passes_clause(0, 0, &[7, 11]));
        assert!(!s.slot_passes_clause(0, 1, &[7, 11]));
        // Item with no attributes never intersects.
        assert!(!s.slot_passes_clause(0, 2, &[7, 11]));
        // Empty query list passes everything.
        for slot in 0..3 {
            assert!(s.slot_passes_clause(0, slot, &[]));
        }
    }

    #[test]
    fn reverse_polarity_basic() {
        let s = store(Polarity::ReverseMatch, &[&[3, 7], &[9], &[]]);
        assert!(!s.slot_passes_clause(0, 0, &[7, 11]));
        assert!(s.slot_passes_clause(0, 1, &[7, 11]));
        assert!(s.slot_passes_clause(0, 2, &[7, 11]));
        for slot in 0..3 {
            assert!(s.slot_passes_clause(0, slot, &[]));
        }
    }

    #[test]
    fn multi_clause_is_conjunction() {
        let s = ClauseStore::new(
            &[spec("allow", Polarity::Match, 4), spec("block", Polarity::ReverseMatch, 4)],
            2,
        );
        s.write_row(0, 0, &[1, 2]);
        s.write_row(1, 0, &[5]);
        s.write_row(0, 1, &[1]);
        s.write_row(1, 1, &[6]);
        let f = QueryFilter::new(vec![vec![1], vec![6]]);
        // Slot 0: allow hits, block list misses -> pass.
        assert!(s.slot_passes(&f, 0));
        // Slot 1: allow hits but block hits too -> fail.
        assert!(!s.slot_passes(&f, 1));
    }

    #[test]
    fn eval_clause_mask_matches_per_slot() {
        let s = store(Polarity::Match, &[&[1], &[2], &[1, 2], &[], &[3]]);
        let mask = s.eval_clause(0, &[1, 3], 5);
        let expect: Vec<usize> =
            (0..5).filter(|&i| s.slot_passes_clause(0, i, &[1, 3])).collect();
        assert_eq!(mask.iter_ones().collect::<Vec<_>>(), expect);
        assert_eq!(mask.iter_ones().collect::<Vec<_>>(), vec![0, 2, 4]);
    }

    #[test]
    fn intersection_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let row: Vec<u64> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0..20)).collect();
            let query: Vec<u64> = (0..rng.random_range(0..6)).map(|_| rng.random_range(0..20)).collect();
            let s = store(Polarity::Match, &[&row]);
            let mut q = query.clone();
            q.sort_unstable();
            q.dedup();
            let naive = !query.is_empty()
                && row.iter().any(|a| query.contains(a));
            let got = s.slot_passes_clause(0, 0, &q);
            let expect = if q.is_empty() { true } else { naive };
            assert_eq!(got, expect, "row {row:?} query {q:?}");
        }
    }

    #[test]
    fn polarities_are_complementary_for_nonempty_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..300 {
            let row: Vec<u64> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0..15)).collect();
            let query: Vec<u64> =
                (1..=rng.random_range(1..5)).map(|_| rng.random_range(0..15)).collect();
            let fwd = store(Polarity::Match, &[&row]);
            let rev = store(Polarity::ReverseMatch, &[&row]);
            let mut q = query;
            q.sort_unstable();
            q.dedup();
            assert_ne!(fwd.slot_passes_clause(0, 0, &q), rev.slot_passes_clause(0, 0, &q));
        }
    }

    #[test]
    fn query_order_is_irrelevant() {
        let s = store(Polarity::Match, &[&[10, 20, 30]]);
        let a = QueryFilter::new(vec![vec![30, 5, 20]]);
        let b = QueryFilter::new(vec![vec![5, 20, 30]]);
        assert_eq!(a, b);
        assert!(s.slot_passes(&a, 0));
    }

    #[test]
    fn filter_validation() {
        let specs = [spec("a", Polarity::Match, 2)];
        assert!(QueryFilter::new(vec![]).validate(&specs).is_err());
        assert!(QueryFilter::new(vec![vec![1], vec![2]]).validate(&specs).is_err());
        assert!(QueryFilter::new(vec![vec![ATTR_SENTINEL]]).validate(&specs).is_err());
        QueryFilter::new(vec![vec![1]]).validate(&specs).unwrap();
    }
}
