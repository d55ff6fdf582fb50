//! Reference answers computed the slow, obvious way: set-membership filter
//! checks, exact dot products, a full sort. The engine is correct exactly
//! when it agrees with this module; nothing here shares code with the
//! engine's filter or top-k paths.

use linr_core::scoring::dot;
use linr_core::{ClauseSpec, ExportRecord, Polarity};

/// Naive clause check. An empty query list constrains nothing.
pub fn clause_passes(item_attrs: &[u64], polarity: Polarity, query_attrs: &[u64]) -> bool {
    if query_attrs.is_empty() {
        return true;
    }
    let overlap = query_attrs.iter().any(|a| item_attrs.contains(a));
    match polarity {
        Polarity::Match => overlap,
        Polarity::ReverseMatch => !overlap,
    }
}

/// AND of all clauses.
pub fn filter_passes(item_attrs: &[Vec<u64>], clauses: &[ClauseSpec], filter: &[Vec<u64>]) -> bool {
    clauses
        .iter()
        .enumerate()
        .all(|(i, spec)| clause_passes(&item_attrs[i], spec.polarity, &filter[i]))
}

/// Exhaustive top-k over `records`: filter, score every passer with an exact
/// dot product, full sort (score desc, slot asc, matching the engine's
/// tie-break). Returns ranked ids and the passer count.
pub fn brute_force_topk(
    records: &[ExportRecord],
    clauses: &[ClauseSpec],
    filter: &[Vec<u64>],
    query_emb: &[f32],
    k: usize,
) -> (Vec<u64>, usize) {
    let mut scored: Vec<(f32, u32, u64)> = records
        .iter()
        .filter(|r| filter_passes(&r.attrs, clauses, filter))
        .map(|r| (dot(query_emb, &r.embedding), r.slot, r.id))
        .collect();
    let pass_count = scored.len();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    (scored.into_iter().map(|(_, _, id)| id).collect(), pass_count)
}

/// |engine ∩ oracle| / |oracle|; an empty oracle set means there was nothing
/// to find, which counts as full recall.
pub fn recall_at_k(engine_ids: &[u64], oracle_ids: &[u64]) -> f64 {
    if oracle_ids.is_empty() {
        return 1.0;
    }
    let oracle: std::collections::HashSet<u64> = oracle_ids.iter().copied().collect();
    let hit = engine_ids.iter().filter(|id| oracle.contains(id)).count();
    hit as f64 / oracle.len() as f64
}
