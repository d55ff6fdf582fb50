//! The three retrieval pipelines.
//!
//! - V1: evaluate the clause mask, score every live slot, apply the mask,
//!   select top-k. Cost is one full scoring scan regardless of selectivity.
//! - V2: evaluate clauses first and gather only passing rows, score the
//!   compact buffer, select top-k. Cost scales with the pass count.
//! - V3: gather bit codes of passing slots, rank candidates by matched bits
//!   against the query code, keep the best `keep_fraction` (never fewer than
//!   k), then re-read and full-precision score only the survivors.
//!
//! All pipelines read slots under the per-slot seqlock, so each returned item
//! reflects one consistent version of that item. With `keep_fraction = 1` and
//! no concurrent writes V3 degenerates to exactly V2's answer.
//!
//! Ranking is by score descending; equal scores break toward the lower slot,
//! which makes every pipeline and the oracle agree bit for bit.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::QueryFilter;
use crate::index::Searcher;
use crate::mask::BitMask;
use crate::quantize::{est_cosine, matched_bits_inverted};
use crate::scoring::{PreparedScorer, QueryVector, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    V1,
    V2,
    V3,
}

impl std::str::FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "v1" => Ok(Algo::V1),
            "v2" => Ok(Algo::V2),
            "v3" => Ok(Algo::V3),
            other => Err(format!("unknown algorithm {other:?}, expected v1|v2|v3")),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::V1 => "v1",
            Algo::V2 => "v2",
            Algo::V3 => "v3",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Query {
    pub embedding: Vec<f32>,
    /// Named auxiliary query embeddings for multi-component scorers.
    pub features: BTreeMap<String, Vec<f32>>,
    pub filter: QueryFilter,
    pub k: usize,
    pub algo: Algo,
    /// V3 only: fraction of passing candidates kept for full scoring.
    pub keep_fraction: f32,
    /// V3 only: skip the full-precision stage and score by estimated cosine.
    pub skip_rerank: bool,
}

impl Query {
    pub fn new(embedding: Vec<f32>, filter: QueryFilter, k: usize) -> Self {
        Query {
            embedding,
            features: BTreeMap::new(),
            filter,
            k,
            algo: Algo::V2,
            keep_fraction: 1.0,
            skip_rerank: false,
        }
    }

    pub fn with_algo(mut self, algo: Algo) -> Self {
        self.algo = algo;
        self
    }

    pub fn with_keep_fraction(mut self, f: f32) -> Self {
        self.keep_fraction = f;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f32,
    pub slot: u32,
}

/// Wall-clock microseconds per stage. For V3 the filter stage includes the
/// candidate gather and the score stage includes both bit ranking and the
/// full-precision rerank.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub filter_us: u64,
    pub score_us: u64,
    pub topk_us: u64,
    pub total_us: u64,
}

#[derive(Clone, Debug)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    /// Slots passing the clause filter.
    pub pass_count: usize,
    /// Items that went through full-precision scoring.
    pub scored_count: usize,
    pub timings: StageTimings,
}

/// Mask plus its popcount, the unit the auto-selection heuristic consumes.
pub struct FilterOutcome {
    pub mask: BitMask,
    pub pass_count: usize,
}

#[inline]
fn rank_cmp(a: &(u32, f32), b: &(u32, f32)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-k of masked scores as (slot, score), best first.
pub fn topk_select(scores: &[f32], mask: &BitMask, k: usize) -> Vec<(u32, f32)> {
    let mut cands: Vec<(u32, f32)> =
        mask.iter_ones().map(|s| (s as u32, scores[s])).collect();
    topk_pairs(cands.as_mut(), k)
}

fn topk_pairs(cands: &mut [(u32, f32)], k: usize) -> Vec<(u32, f32)> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, rank_cmp);
        let kept = &mut cands[..k];
        kept.sort_unstable_by(rank_cmp);
        kept.to_vec()
    } else {
        cands.sort_unstable_by(rank_cmp);
        cands.to_vec()
    }
}

fn validate_query(searcher: &Searcher, q: &Query) -> Result<()> {
    let cfg = searcher.config();
    if q.k == 0 {
        return Err(Error::ZeroK);
    }
    if q.embedding.len() != cfg.dim {
        return Err(Error::DimMismatch { expected: cfg.dim, got: q.embedding.len() });
    }
    q.filter.validate(&cfg.clauses)?;
    if !(q.keep_fraction > 0.0 && q.keep_fraction <= 1.0) {
        return Err(Error::BadKeepFraction(q.keep_fraction));
    }
    Ok(())
}

/// Picks a pipeline from the estimated pass rate: gather-then-score when the
/// filter is selective, otherwise full scans (quantized if available).
pub fn choose_algo(pass_rate: f64, low_pass_threshold: f64, quantized: bool) -> Algo {
    if pass_rate < low_pass_threshold {
        Algo::V2
    } else if quantized {
        Algo::V3
    } else {
        Algo::V1
    }
}

impl Searcher {
    /// Mask for a single clause against one attribute list, liveness
    /// ignored: dead slots keep whatever verdict their stale row produces.
    /// Meant for selectivity inspection of one clause in isolation; the
    /// pipelines combine clauses with liveness per slot instead.
    pub fn eval_clause(&self, clause: usize, attrs: &[u64]) -> Result<BitMask> {
        let specs = &self.config().clauses;
        if clause >= specs.len() {
            return Err(Error::UnknownClause(format!("#{clause}")));
        }
        let mut query = attrs.to_vec();
        query.sort_unstable();
        query.dedup();
        if query.contains(&crate::config::ATTR_SENTINEL) {
            return Err(Error::ReservedAttr(crate::config::ATTR_SENTINEL));
        }
        let sh = &*self.shared;
        Ok(sh.clauses.eval_clause(clause, &query, sh.hwm()))
    }

    /// Clause mask over slots `0..hwm`, liveness applied.
    pub fn eval_filter(&self, filter: &QueryFilter) -> Result<FilterOutcome> {
        filter.validate(&self.config().clauses)?;
        let sh = &*self.shared;
        let hwm = sh.hwm();
        let mut mask = BitMask::zeros(hwm);
        for slot in 0..hwm {
            if sh.slot_read(slot, |sh| sh.clauses.slot_passes(filter, slot)) == Some(true) {
                mask.set(slot);
            }
        }
        let pass_count = mask.count_ones();
        Ok(FilterOutcome { mask, pass_count })
    }

    pub fn query(&self, scorer: &dyn Scorer, q: &Query) -> Result<RetrievalResult> {
        validate_query(self, q)?;
        let prepared =
            scorer.prepare(&QueryVector { embedding: &q.embedding, features: &q.features })?;
        match q.algo {
            Algo::V1 => self.query_v1(prepared.as_ref(), q),
            Algo::V2 => self.query_v2(prepared.as_ref(), q),
            Algo::V3 => self.query_v3(prepared.as_ref(), q),
        }
    }

    /// Evaluates the filter once to estimate selectivity, then dispatches.
    /// Returns the chosen pipeline with the result.
    pub fn query_auto(
        &self,
        scorer: &dyn Scorer,
        q: &Query,
        low_pass_threshold: f64,
    ) -> Result<(Algo, RetrievalResult)> {
        let outcome = self.eval_filter(&q.filter)?;
        let live = self.live_count().max(1) as f64;
        let algo =
            choose_algo(outcome.pass_count as f64 / live, low_pass_threshold, self.quantization_enabled());
        let mut chosen = q.clone();
        chosen.algo = algo;
        Ok((algo, self.query(scorer, &chosen)?))
    }

    /// Independent queries scored in parallel.
    pub fn query_batch(
        &self,
        scorer: &dyn Scorer,
        queries: &[Query],
    ) -> Vec<Result<RetrievalResult>> {
        use rayon::prelude::*;
        queries.par_iter().map(|q| self.query(scorer, q)).collect()
    }

    fn query_v1(&self, prepared: &dyn PreparedScorer, q: &Query) -> Result<RetrievalResult> {
        let sh = &*self.shared;
        let hwm = sh.hwm();
        let t_start = Instant::now();

        // Stage 1: clause mask, remembering the version each verdict used.
        let mut mask = BitMask::zeros(hwm);
        let mut versions = vec![u64::MAX; hwm];
        for slot in 0..hwm {
            if let Some((pass, v)) =
                sh.slot_read_v(slot, |sh| sh.clauses.slot_passes(&q.filter, slot))
            {
                if pass {
                    mask.set(slot);
                }
                versions[slot] = v;
            }
        }
        let t_filter = t_start.elapsed();

        // Stage 2: score every live slot, filtered or not. A slot whose
        // version moved since stage 1 gets its verdict recomputed in the same
        // consistent read as its score.
        let t2 = Instant::now();
        let mut scores = vec![f32::NEG_INFINITY; hwm];
        let mut ids = vec![0u64; hwm];
        let mut row = vec![0.0f32; sh.config.dim];
        let mut scored = 0usize;
        for slot in 0..hwm {
            let read = sh.slot_read_v(slot, |sh| {
                sh.embeddings.copy_row(slot, &mut row);
                (sh.id_at(slot), sh.clauses.slot_passes(&q.filter, slot))
            });
            match read {
                Some(((id, pass), v)) => {
                    scores[slot] = prepared.score(&row);
                    ids[slot] = id;
                    scored += 1;
                    if v != versions[slot] {
                        if pass {
                            mask.set(slot);
                        } else {
                            mask.clear(slot);
                        }
                    }
                }
                None => mask.clear(slot),
            }
        }
        let t_score = t2.elapsed();

        let t3 = Instant::now();
        let pass_count = mask.count_ones();
        let top = topk_select(&scores, &mask, q.k);
        let hits =
            top.into_iter().map(|(slot, score)| Hit { id: ids[slot as usize], score, slot }).collect();
        let t_topk = t3.elapsed();

        Ok(RetrievalResult {
            hits,
            pass_count,
            scored_count: scored,
            timings: StageTimings {
                filter_us: t_filter.as_micros() as u64,
                score_us: t_score.as_micros() as u64,
                topk_us: t_topk.as_micros() as u64,
                total_us: t_start.elapsed().as_micros() as u64,
            },
        })
    }

    fn query_v2(&self, prepared: &dyn PreparedScorer, q: &Query) -> Result<RetrievalResult> {
        let sh = &*self.shared;
        let hwm = sh.hwm();
        let dim = sh.config.dim;
        let t_start = Instant::now();

        // Stage 1: filter and gather passing rows into a compact buffer.
        let mut meta: Vec<(u32, u64)> = Vec::new();
        let mut rows: Vec<f32> = Vec::new();
        let mut scratch = vec![0.0f32; dim];
        for slot in 0..hwm {
            let passed = sh.slot_read(slot, |sh| {
                if sh.clauses.slot_passes(&q.filter, slot) {
                    sh.embeddings.copy_row(slot, &mut scratch);
                    Some(sh.id_at(slot))
                } else {
                    None
                }
            });
            if let Some(Some(id)) = passed {
                meta.push((slot as u32, id));
                rows.extend_from_slice(&scratch);
            }
        }
        let pass_count = meta.len();
        let t_filter = t_start.elapsed();

        // Stage 2: score only the gathered rows.
        let t2 = Instant::now();
        let mut cands: Vec<(u32, f32)> = Vec::with_capacity(pass_count);
        for (i, (slot, _)) in meta.iter().enumerate() {
            cands.push((*slot, prepared.score(&rows[i * dim..(i + 1) * dim])));
        }
        let t_score = t2.elapsed();

        let t3 = Instant::now();
        let top = topk_pairs(&mut cands, q.k);
        let hits = top
            .into_iter()
            .map(|(slot, score)| {
                let idx = meta.binary_search_by_key(&slot, |m| m.0).unwrap();
                Hit { id: meta[idx].1, score, slot }
            })
            .collect();
        let t_topk = t3.elapsed();

        Ok(RetrievalResult {
            hits,
            pass_count,
            scored_count: pass_count,
            timings: StageTimings {
                filter_us: t_filter.as_micros() as u64,
                score_us: t_score.as_micros() as u64,
                topk_us: t_topk.as_micros() as u64,
                total_us: t_start.elapsed().as_micros() as u64,
            },
        })
    }

    fn query_v3(&self, prepared: &dyn PreparedScorer, q: &Query) -> Result<RetrievalResult> {
        let sh = &*self.shared;
        let oporp = sh.oporp.as_ref().ok_or(Error::QuantizationDisabled)?;
        let codes = sh.codes.as_ref().ok_or(Error::QuantizationDisabled)?;
        let words = codes.words_per_item();
        let hwm = sh.hwm();
        let t_start = Instant::now();

        let inv_query = oporp.encode(&q.embedding)?.invert();

        // Stage 1: filter and gather candidate codes.
        let mut meta: Vec<(u32, u64)> = Vec::new();
        let mut cand_words: Vec<u64> = Vec::new();
        let mut scratch = vec![0u64; words];
        for slot in 0..hwm {
            let passed = sh.slot_read(slot, |sh| {
                if sh.clauses.slot_passes(&q.filter, slot) {
                    sh.codes.as_ref().unwrap().copy_row(slot, &mut scratch);
                    Some(sh.id_at(slot))
                } else {
                    None
                }
            });
            if let Some(Some(id)) = passed {
                meta.push((slot as u32, id));
                cand_words.extend_from_slice(&scratch);
            }
        }
        let pass_count = meta.len();
        let t_filter = t_start.elapsed();

        // Stage 2: rank candidates by matched bits; keep the requested
        // fraction but never fewer than k.
        let t2 = Instant::now();
        let mut ranked: Vec<(u32, u32, usize)> = meta
            .iter()
            .enumerate()
            .map(|(i, (slot, _))| {
                let m =
                    matched_bits_inverted(inv_query.words(), &cand_words[i * words..(i + 1) * words]);
                (m, *slot, i)
            })
            .collect();
        let keep = ((q.keep_fraction as f64 * pass_count as f64).ceil() as usize)
            .max(q.k)
            .min(pass_count);
        let bit_cmp = |a: &(u32, u32, usize), b: &(u32, u32, usize)| {
            b.0.cmp(&a.0).then(a.1.cmp(&b.1))
        };
        if ranked.len() > keep {
            ranked.select_nth_unstable_by(keep - 1, bit_cmp);
            ranked.truncate(keep);
        }

        if q.skip_rerank {
            // Estimated-cosine scores; no full-precision stage at all.
            ranked.sort_unstable_by(bit_cmp);
            ranked.truncate(q.k);
            let t_score = t2.elapsed();
            let t3 = Instant::now();
            let hits = ranked
                .iter()
                .map(|&(m, slot, i)| Hit {
                    id: meta[i].1,
                    score: est_cosine(m, oporp.bits()),
                    slot,
                })
                .collect();
            let t_topk = t3.elapsed();
            return Ok(RetrievalResult {
                hits,
                pass_count,
                scored_count: 0,
                timings: StageTimings {
                    filter_us: t_filter.as_micros() as u64,
                    score_us: t_score.as_micros() as u64,
                    topk_us: t_topk.as_micros() as u64,
                    total_us: t_start.elapsed().as_micros() as u64,
                },
            });
        }

        // Stage 3: re-read survivors under the seqlock and score at full
        // precision. Items deleted or mutated out of the filter since stage 1
        // drop out here; that is the wholly-new view.
        let mut row = vec![0.0f32; sh.config.dim];
        let mut cands: Vec<(u32, f32)> = Vec::with_capacity(ranked.len());
        let mut ids: Vec<(u32, u64)> = Vec::with_capacity(ranked.len());
        for &(_, slot, _) in &ranked {
            let s = slot as usize;
            let read = sh.slot_read(s, |sh| {
                if sh.clauses.slot_passes(&q.filter, s) {
                    sh.embeddings.copy_row(s, &mut row);
                    Some(sh.id_at(s))
                } else {
                    None
                }
            });
            if let Some(Some(id)) = read {
                cands.push((slot, prepared.score(&row)));
                ids.push((slot, id));
            }
        }
        let scored_count = cands.len();
        let t_score = t2.elapsed();

        let t3 = Instant::now();
        ids.sort_unstable_by_key(|m| m.0);
        let top = topk_pairs(&mut cands, q.k);
        let hits = top
            .into_iter()
            .map(|(slot, score)| {
                let idx = ids.binary_search_by_key(&slot, |m| m.0).unwrap();
                Hit { id: ids[idx].1, score, slot }
            })
            .collect();
        let t_topk = t3.elapsed();

        Ok(RetrievalResult {
            hits,
            pass_count,
            scored_count,
            timings: StageTimings {
                filter_us: t_filter.as_micros() as u64,
                score_us: t_score.as_micros() as u64,
                topk_us: t_topk.as_micros() as u64,
                total_us: t_start.elapsed().as_micros() as u64,
            },
        })
    }
}
