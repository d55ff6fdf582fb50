//! End-to-end benchmark driver: bootstrap an index from a fixture change
//! log, precompute oracle answers, then time each configured algorithm and
//! batch size against the same query set. Timing is wall-clock on a single
//! issuing thread; a warm-up prefix is run untimed before every row so cold
//! caches do not pollute the first samples. An optional update thread
//! re-upserts live items with identical content at a fixed rate, which
//! exercises the write path and seqlock retries without changing any
//! correct answer.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use linr_core::config::{compression_report, corpus_gib, CompressionReport};
use linr_core::scoring::DotScorer;
use linr_core::{Index, IndexConfig, Query, Searcher};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AlgoSpec, BenchConfig};
use crate::error::{BenchError, Result};
use crate::metrics::{mean, p95};
use crate::oracle::{brute_force_topk, recall_at_k};
use crate::synthetic::{positional_filter, read_queries, to_core_query, QueryFixture};

/// Queries issued untimed before each measured row.
const WARMUP: usize = 32;

/// One (algorithm, batch size) measurement. For `batch` = 1 the latency
/// columns are per query; for larger batches they are per batch call.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub algo: String,
    pub keep_fraction: f32,
    pub batch: usize,
    pub avg_ms: f64,
    pub p95_ms: f64,
    pub recall: f64,
    pub mean_scored: f64,
    pub mean_pass_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvInfo {
    pub os: &'static str,
    pub arch: &'static str,
    pub threads: usize,
    pub build: &'static str,
}

impl EnvInfo {
    pub fn capture() -> EnvInfo {
        EnvInfo {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            build: if cfg!(debug_assertions) { "debug" } else { "release" },
        }
    }
}

/// Storage cost of the index under test plus fleet-scale extrapolations.
#[derive(Clone, Debug, Serialize)]
pub struct MemoryReport {
    pub live_items: usize,
    pub index_bytes: u64,
    pub compression: CompressionReport,
    pub corpus_1e9_f16_gib: f64,
    pub corpus_1e9_code_gib: f64,
}

impl MemoryReport {
    pub fn capture(icfg: &IndexConfig, live_items: usize) -> MemoryReport {
        let compression = compression_report(icfg.dim, icfg.quant_bits);
        MemoryReport {
            live_items,
            index_bytes: icfg.estimated_bytes(),
            corpus_1e9_f16_gib: corpus_gib(1_000_000_000, compression.f16_bytes_per_item),
            corpus_1e9_code_gib: corpus_gib(1_000_000_000, compression.code_bytes_per_item),
            compression,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub env: EnvInfo,
    pub memory: MemoryReport,
    pub measured_queries: usize,
    pub warmup_queries: usize,
    pub update_ops_applied: u64,
    pub rows: Vec<BenchRow>,
}

struct UpdateThread {
    stop: Arc<AtomicBool>,
    applied: Arc<AtomicU64>,
    handle: std::thread::JoinHandle<Index>,
}

impl UpdateThread {
    /// Takes ownership of the index and re-upserts live items, identical
    /// content, round-robin, at `rate` ops per second.
    fn spawn(index: Index, rate: u64) -> UpdateThread {
        let items: Vec<(u64, Vec<f32>, Vec<Vec<u64>>)> = index
            .export_live()
            .into_iter()
            .map(|r| (r.id, r.embedding, r.attrs))
            .collect();
        let stop = Arc::new(AtomicBool::new(false));
        let applied = Arc::new(AtomicU64::new(0));
        let handle = {
            let stop = Arc::clone(&stop);
            let applied = Arc::clone(&applied);
            std::thread::spawn(move || {
                let mut index = index;
                let interval = Duration::from_secs_f64(1.0 / rate as f64);
                // First op fires immediately; short measurement windows
                // must still observe a nonzero applied count.
                let mut next = Instant::now();
                let mut cursor = 0usize;
                while !stop.load(Ordering::Relaxed) {
                    let now = Instant::now();
                    if now < next {
                        std::thread::sleep((next - now).min(Duration::from_millis(2)));
                        continue;
                    }
                    next += interval;
                    if let Some((id, emb, attrs)) = items.get(cursor) {
                        if index.upsert(*id, emb, attrs).is_ok() {
                            applied.fetch_add(1, Ordering::Relaxed);
                        }
                        cursor = (cursor + 1) % items.len();
                    }
                }
                index
            })
        };
        UpdateThread { stop, applied, handle }
    }

    fn stop(self) -> (Index, u64) {
        self.stop.store(true, Ordering::Relaxed);
        let index = self.handle.join().expect("update thread panicked");
        (index, self.applied.load(Ordering::Relaxed))
    }
}

/// Run the full benchmark over previously generated fixtures.
pub fn run_benchmark(changelog: &Path, queries: &Path, cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let icfg = cfg.index_config();
    let boot = linr_ingest::bootstrap(None, changelog, &icfg)?;
    if boot.poisoned > 0 {
        return Err(BenchError::BadFixture(format!(
            "{} poisoned records in fixture change log",
            boot.poisoned
        )));
    }
    let index = boot.index;
    let live = index.live_count() as usize;
    let fixtures = read_queries(queries)?;

    // Oracle answers once, shared by every row. Parallel because each query
    // is an exhaustive scan.
    let records = index.export_live();
    let filters: Vec<Vec<Vec<u64>>> =
        fixtures.iter().map(|q| positional_filter(q, &icfg)).collect::<Result<_>>()?;
    let oracle: Vec<(Vec<u64>, usize)> = fixtures
        .par_iter()
        .zip(&filters)
        .map(|(q, f)| brute_force_topk(&records, &icfg.clauses, f, &q.emb, q.k))
        .collect();

    let searcher = index.searcher();
    let updates = if cfg.update_rate > 0 {
        Some(UpdateThread::spawn(index, cfg.update_rate))
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut row_err = None;
    for spec in &cfg.algos {
        for &batch in &cfg.batch_sizes {
            match measure_row(&searcher, &icfg, &fixtures, &oracle, *spec, batch, live) {
                Ok(row) => rows.push(row),
                Err(e) => {
                    row_err = Some(e);
                    break;
                }
            }
        }
        if row_err.is_some() {
            break;
        }
    }
    // Stop the writer before surfacing any error so the thread never leaks.
    let update_ops_applied = match updates {
        Some(u) => u.stop().1,
        None => 0,
    };
    if let Some(e) = row_err {
        return Err(e);
    }

    Ok(BenchReport {
        env: EnvInfo::capture(),
        memory: MemoryReport::capture(&icfg, live),
        measured_queries: fixtures.len(),
        warmup_queries: WARMUP.min(fixtures.len()),
        update_ops_applied,
        rows,
        config: cfg.clone(),
    })
}

fn measure_row(
    searcher: &Searcher,
    icfg: &IndexConfig,
    fixtures: &[QueryFixture],
    oracle: &[(Vec<u64>, usize)],
    spec: AlgoSpec,
    batch: usize,
    live: usize,
) -> Result<BenchRow> {
    let queries: Vec<Query> =
        fixtures.iter().map(|q| to_core_query(q, icfg, spec)).collect::<Result<_>>()?;

    for q in queries.iter().take(WARMUP) {
        searcher.query(&DotScorer, q).map_err(BenchError::Core)?;
    }

    let mut samples = Vec::new();
    let mut recalls = Vec::with_capacity(queries.len());
    let mut scored = Vec::with_capacity(queries.len());
    let mut pass_rates = Vec::with_capacity(queries.len());
    let mut record = |res: &linr_core::RetrievalResult, oracle_ids: &[u64]| {
        let ids: Vec<u64> = res.hits.iter().map(|h| h.id).collect();
        recalls.push(recall_at_k(&ids, oracle_ids));
        scored.push(res.scored_count as f64);
        pass_rates.push(res.pass_count as f64 / live.max(1) as f64);
    };

    if batch <= 1 {
        for (q, (oracle_ids, _)) in queries.iter().zip(oracle) {
            let t = Instant::now();
            let res = searcher.query(&DotScorer, q).map_err(BenchError::Core)?;
            samples.push(t.elapsed().as_secs_f64() * 1e3);
            record(&res, oracle_ids);
        }
    } else {
        for (chunk, ochunk) in queries.chunks(batch).zip(oracle.chunks(batch)) {
            let t = Instant::now();
            let results = searcher.query_batch(&DotScorer, chunk);
            samples.push(t.elapsed().as_secs_f64() * 1e3);
            for (res, (oracle_ids, _)) in results.into_iter().zip(ochunk) {
                record(&res.map_err(BenchError::Core)?, oracle_ids);
            }
        }
    }

    Ok(BenchRow {
        algo: spec.algo.to_string(),
        keep_fraction: spec.keep_fraction,
        batch: batch.max(1),
        avg_ms: mean(&samples),
        p95_ms: p95(&samples),
        recall: mean(&recalls),
        mean_scored: mean(&scored),
        mean_pass_rate: mean(&pass_rates),
    })
}

/// Fixed-width text rendering of a report, one row per measurement.
pub fn render_table(report: &BenchReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} items, dim {}, {} queries, k {}, {} threads, {} build",
        report.memory.live_items,
        report.config.dim,
        report.measured_queries,
        report.config.k,
        report.env.threads,
        report.env.build,
    );
    let _ = writeln!(
        out,
        "index {:.1} MiB; per item f16 {} B vs code {} B ({:.1}x); 1e9 items: f16 {:.1} GiB, codes {:.1} GiB",
        report.memory.index_bytes as f64 / (1 << 20) as f64,
        report.memory.compression.f16_bytes_per_item,
        report.memory.compression.code_bytes_per_item,
        report.memory.compression.ratio,
        report.memory.corpus_1e9_f16_gib,
        report.memory.corpus_1e9_code_gib,
    );
    if report.config.update_rate > 0 {
        let _ = writeln!(
            out,
            "update thread: {} ops/s requested, {} applied",
            report.config.update_rate, report.update_ops_applied
        );
    }
    let _ = writeln!(
        out,
        "{:<6} {:>6} {:>6} {:>10} {:>10} {:>8} {:>12} {:>10}",
        "algo", "keep", "batch", "avg_ms", "p95_ms", "recall", "scored", "pass_rate"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<6} {:>6.3} {:>6} {:>10.3} {:>10.3} {:>8.4} {:>12.1} {:>10.4}",
            r.algo, r.keep_fraction, r.batch, r.avg_ms, r.p95_ms, r.recall, r.mean_scored,
            r.mean_pass_rate
        );
    }
    out
}
