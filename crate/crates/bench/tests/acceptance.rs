//! Release acceptance suite. One test per numbered criterion; each prints
//! exactly one `ACCEPTANCE <n> <PASS|FAIL> ...` line with its measured
//! values, and the tolerance pinned in the assertion. Run with
//! `cargo test -p linr-bench --test acceptance -- --nocapture` to see the
//! lines for passing criteria too.
//!
//! Criterion 5 runs a 60-second live window per update rate and dominates
//! the suite's wall time by design.

use std::collections::HashMap;
use std::sync::RwLock;
use std::time::{Duration, Instant};

use linr_bench::config::{AlgoSpec, BenchConfig, ClauseProfile};
use linr_bench::harness::{run_benchmark, MemoryReport};
use linr_bench::oracle::{brute_force_topk, filter_passes, recall_at_k};
use linr_core::retrieval::Hit;
use linr_core::scoring::kmeans::kmeans_trace;
use linr_core::scoring::mlp::{Activation, HadamardMlp, HadamardMlpScorer, Layer, Mlp};
use linr_core::scoring::mol::{softmax_in_place, MolComponent, MolModel};
use linr_core::scoring::{cosine, dot, DotScorer, Matrix, QueryVector};
use linr_core::{
    est_cosine, matched_bits, normalize_upsert, Algo, ClauseSpec, Index, IndexConfig, OporpParams,
    Polarity, Query, QueryFilter,
};
use linr_ingest::{bootstrap, logical_state, read_log, write_snapshot, LogWriter, Updator};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Prints the criterion's one-line verdict, then enforces it.
fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {n} {verdict} {detail}");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn unit_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut v: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    } else {
        v[0] = 1.0;
    }
    v
}

/// Up to `max_len` sorted distinct attrs below `universe`; may be empty.
fn attr_list(universe: u64, max_len: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let n = rng.random_range(0..=max_len);
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..universe)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

// Criterion 1: on 200 random instances, V1 and V2 id lists equal each other
// and the brute-force oracle on every instance, within a 2 minute budget.
#[test]
fn criterion_1_exactness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let dims = [16usize, 64, 128];
    let ks = [1usize, 10, 200];
    let universe = 25u64;
    let instances = 200;
    let mut matched = 0;
    let mut first_failure = String::new();

    for inst in 0..instances {
        let n = rng.random_range(100..=10_000usize);
        let dim = dims[rng.random_range(0..dims.len())];
        let n_clauses = rng.random_range(1..=3usize);
        let reverse_at = rng.random_range(0..n_clauses);
        let clauses: Vec<ClauseSpec> = (0..n_clauses)
            .map(|i| ClauseSpec {
                name: format!("c{i}"),
                polarity: if i == reverse_at || rng.random_bool(0.3) {
                    Polarity::ReverseMatch
                } else {
                    Polarity::Match
                },
                max_attrs: 4,
            })
            .collect();
        let cfg = IndexConfig {
            capacity: n,
            dim,
            clauses,
            quant_bits: 0,
            seed: 0,
            memory_budget_bytes: None,
        };
        let mut index = Index::create(cfg.clone()).unwrap();
        for id in 0..n as u64 {
            let emb: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let attrs: Vec<Vec<u64>> =
                (0..n_clauses).map(|_| attr_list(universe, 3, &mut rng)).collect();
            index.upsert(id, &emb, &attrs).unwrap();
        }
        // Tombstones and slot reuse are part of a realistic instance.
        for _ in 0..n / 20 {
            index.delete(rng.random_range(0..n as u64));
        }
        for _ in 0..n / 40 {
            let id = rng.random_range(0..n as u64);
            let emb: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let attrs: Vec<Vec<u64>> =
                (0..n_clauses).map(|_| attr_list(universe, 3, &mut rng)).collect();
            index.upsert(id, &emb, &attrs).unwrap();
        }

        let records = index.export_live();
        let searcher = index.searcher();
        let k = ks[rng.random_range(0..ks.len())];
        let emb: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let filter: Vec<Vec<u64>> =
            (0..n_clauses).map(|_| attr_list(universe, 3, &mut rng)).collect();

        let (oracle_ids, oracle_pass) =
            brute_force_topk(&records, &cfg.clauses, &filter, &emb, k);
        let q = Query::new(emb, QueryFilter::new(filter), k);
        let r1 = searcher.query(&DotScorer, &q.clone().with_algo(Algo::V1)).unwrap();
        let r2 = searcher.query(&DotScorer, &q.with_algo(Algo::V2)).unwrap();
        let ids1: Vec<u64> = r1.hits.iter().map(|h| h.id).collect();
        let ids2: Vec<u64> = r2.hits.iter().map(|h| h.id).collect();

        if ids1 == oracle_ids
            && ids2 == oracle_ids
            && r1.pass_count == oracle_pass
            && r2.pass_count == oracle_pass
        {
            matched += 1;
        } else if first_failure.is_empty() {
            first_failure = format!(
                " (first mismatch: instance {inst}, n {n}, dim {dim}, k {k})"
            );
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let pass = matched == instances && elapsed < 120.0;
    report(
        1,
        pass,
        &format!(
            "exactness: {matched}/{instances} instances with v1 == v2 == oracle \
             (ids and pass counts), {elapsed:.1}s of 120s budget{first_failure}"
        ),
    );
}

// Criterion 2: at dim 128 and 512 bits the mean absolute cosine estimation
// error over 10^4 random unit pairs is at most 0.06, and the 5-seed mean
// error strictly decreases along 64 -> 128 -> 256 -> 512 bits.
#[test]
fn criterion_2_quantizer_accuracy() {
    let dim = 128;
    let n_pairs = 10_000;
    let bit_widths = [64usize, 128, 256, 512];
    let mut mean_err = Vec::with_capacity(bit_widths.len());
    let mut seed0_512 = 0.0f64;

    for &bits in &bit_widths {
        let mut per_seed = Vec::with_capacity(5);
        for seed in 0..5u64 {
            let params = OporpParams::derive(dim, bits, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0xACC2 ^ (bits as u64) << 8 ^ seed);
            let mut total = 0.0f64;
            for _ in 0..n_pairs {
                let a = unit_vec(dim, &mut rng);
                let b = unit_vec(dim, &mut rng);
                let ca = params.encode(&a).unwrap();
                let cb = params.encode(&b).unwrap();
                let est = est_cosine(matched_bits(&ca, &cb).unwrap(), bits);
                total += (est as f64 - cosine(&a, &b) as f64).abs();
            }
            per_seed.push(total / n_pairs as f64);
        }
        if bits == 512 {
            seed0_512 = per_seed[0];
        }
        mean_err.push(per_seed.iter().sum::<f64>() / per_seed.len() as f64);
    }

    let strictly_decreasing = mean_err.windows(2).all(|w| w[1] < w[0]);
    let pass = seed0_512 <= 0.06 && strictly_decreasing;
    report(
        2,
        pass,
        &format!(
            "quantizer: dim 128, mean |est - cos| over 10^4 unit pairs at 512 bits = \
             {seed0_512:.4} (limit 0.06); 5-seed means over 64/128/256/512 bits = \
             {:.4}/{:.4}/{:.4}/{:.4}, strictly decreasing = {strictly_decreasing}",
            mean_err[0], mean_err[1], mean_err[2], mean_err[3]
        ),
    );
}

// Criterion 3: clustered 10^5 items at dim 128, K 2000: V3 recall@2000
// against V2 is non-decreasing over keep fractions 0.1%/1%/10%/100%,
// exactly 1.0 at 100%, and at least 0.95 at 1%.
#[test]
fn criterion_3_v3_tradeoff_curve() {
    let n = 100_000usize;
    let dim = 128;
    let k = 2000;
    let n_clusters = 50;
    let cluster_std = 0.35f32;
    let cfg = IndexConfig {
        capacity: n,
        dim,
        clauses: vec![],
        quant_bits: 512,
        seed: 7,
        memory_budget_bytes: None,
    };
    let mut index = Index::create(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
    let centers: Vec<Vec<f32>> = (0..n_clusters).map(|_| unit_vec(dim, &mut rng)).collect();
    let scale = cluster_std / (dim as f32).sqrt();
    let clustered = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let c = &centers[rng.random_range(0..n_clusters)];
        let mut v: Vec<f32> =
            (0..dim).map(|i| c[i] + scale * rng.sample::<f32, _>(StandardNormal)).collect();
        let nm = dot(&v, &v).sqrt();
        for x in &mut v {
            *x /= nm;
        }
        v
    };
    for id in 0..n as u64 {
        let emb = clustered(&mut rng);
        index.upsert(id, &emb, &[]).unwrap();
    }
    let searcher = index.searcher();

    let keeps = [0.001f32, 0.01, 0.1, 1.0];
    let n_queries = 20;
    let mut recall_sums = [0.0f64; 4];
    for _ in 0..n_queries {
        let q = Query::new(clustered(&mut rng), QueryFilter::match_all(0), k);
        let exact = searcher.query(&DotScorer, &q.clone().with_algo(Algo::V2)).unwrap();
        let exact_ids: Vec<u64> = exact.hits.iter().map(|h| h.id).collect();
        for (i, &keep) in keeps.iter().enumerate() {
            let approx = searcher
                .query(&DotScorer, &q.clone().with_algo(Algo::V3).with_keep_fraction(keep))
                .unwrap();
            let ids: Vec<u64> = approx.hits.iter().map(|h| h.id).collect();
            recall_sums[i] += recall_at_k(&ids, &exact_ids);
        }
    }
    let recalls: Vec<f64> = recall_sums.iter().map(|s| s / n_queries as f64).collect();

    // Candidate sets are nested across keep fractions, so per-query recall
    // is monotone and the means must be too, with no float slack.
    let non_decreasing = recalls.windows(2).all(|w| w[1] >= w[0]);
    let pass = non_decreasing && recalls[3] == 1.0 && recalls[1] >= 0.95;
    report(
        3,
        pass,
        &format!(
            "v3 curve: N=10^5 dim=128 K=2000, recall@2000 vs v2 at keep \
             0.1%/1%/10%/100% = {:.4}/{:.4}/{:.4}/{:.4}; non-decreasing = \
             {non_decreasing}, 1.0 at 100%, >= 0.95 at 1%",
            recalls[0], recalls[1], recalls[2], recalls[3]
        ),
    );
}

// Criterion 4: dim-64 two-byte embeddings against 64-bit codes compress
// 16.0x exactly, and the 10^9-item extrapolation reads about 120 GB down
// to 7.5 GB, each within 1%.
#[test]
fn criterion_4_memory_arithmetic() {
    let icfg = IndexConfig {
        capacity: 1,
        dim: 64,
        clauses: vec![],
        quant_bits: 64,
        seed: 0,
        memory_budget_bytes: None,
    };
    let m = MemoryReport::capture(&icfg, 1);
    let ratio_exact = m.compression.ratio == 16.0;
    let f16_dev = (m.corpus_1e9_f16_gib / 120.0 - 1.0).abs();
    let code_dev = (m.corpus_1e9_code_gib / 7.5 - 1.0).abs();
    let pass = ratio_exact && f16_dev <= 0.01 && code_dev <= 0.01;
    report(
        4,
        pass,
        &format!(
            "memory: dim 64 f16 {} B vs 64-bit code {} B per item = {:.1}x (exact); \
             10^9 items {:.3} GiB vs 120 GB ({:.2}% off) and {:.4} GiB vs 7.5 GB \
             ({:.2}% off), both within 1%",
            m.compression.f16_bytes_per_item,
            m.compression.code_bytes_per_item,
            m.compression.ratio,
            m.corpus_1e9_f16_gib,
            f16_dev * 100.0,
            m.corpus_1e9_code_gib,
            code_dev * 100.0
        ),
    );
}

/// Every historical (embedding, attrs) version of every id, shared between
/// the criterion-5 writer and validator. A returned hit is sound exactly
/// when some version of its id passes the filter and reproduces its score
/// bit for bit; the per-slot seqlock promises filter verdict and scored
/// embedding come from one version.
type History = RwLock<HashMap<u64, Vec<(Vec<f32>, Vec<Vec<u64>>)>>>;

fn hit_is_sound(
    hit: &Hit,
    query_emb: &[f32],
    filter: &[Vec<u64>],
    clauses: &[ClauseSpec],
    history: &HashMap<u64, Vec<(Vec<f32>, Vec<Vec<u64>>)>>,
) -> bool {
    let Some(states) = history.get(&hit.id) else {
        return false;
    };
    states.iter().any(|(emb, attrs)| {
        filter_passes(attrs, clauses, filter) && dot(query_emb, emb) == hit.score
    })
}

struct LiveRunOutcome {
    queries: u64,
    violations: u64,
    replay_ok: bool,
    mean_ms: f64,
    p95_ms: f64,
}

fn live_window(rate: u64, window: Duration) -> LiveRunOutcome {
    let dim = 16;
    let universe = 40u64;
    let base_n = 5_000u64;
    let id_space = 6_000u64;
    let icfg = IndexConfig {
        capacity: 10_000,
        dim,
        clauses: vec![
            ClauseSpec { name: "topic".into(), polarity: Polarity::Match, max_attrs: 4 },
            ClauseSpec { name: "blocked".into(), polarity: Polarity::ReverseMatch, max_attrs: 3 },
        ],
        quant_bits: 0,
        seed: 0,
        memory_budget_bytes: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("live.jsonl");

    let history: History = RwLock::new(HashMap::new());
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC5 + rate);
    {
        let mut log = LogWriter::open(&log_path, &icfg).unwrap();
        let mut hist = history.write().unwrap();
        for id in 0..base_n {
            let emb = unit_vec(dim, &mut rng);
            let attrs =
                vec![attr_list(universe, 3, &mut rng), attr_list(universe, 2, &mut rng)];
            let norm = normalize_upsert(&icfg, &emb, &attrs).unwrap();
            log.append_upsert(id, &emb, &norm).unwrap();
            hist.entry(id).or_default().push((emb, norm));
        }
        log.sync().unwrap();
    }

    let boot = bootstrap(None, &log_path, &icfg).unwrap();
    assert_eq!(boot.poisoned, 0, "clean base log");
    let updator = Updator::spawn(
        boot.index,
        &log_path,
        Duration::from_millis(2),
        boot.log_offset,
        boot.log_lines,
    );
    let searcher = updator.searcher();
    let deadline = Instant::now() + window;

    let (appended, queries, violations, latencies) = std::thread::scope(|s| {
        let writer = (rate > 0).then(|| {
            s.spawn(|| {
                let mut log = LogWriter::open(&log_path, &icfg).unwrap();
                let mut wrng = ChaCha8Rng::seed_from_u64(0xFEED + rate);
                let interval = Duration::from_secs_f64(1.0 / rate as f64);
                let mut next = Instant::now();
                let mut appended = 0u64;
                while Instant::now() < deadline {
                    let now = Instant::now();
                    if now < next {
                        std::thread::sleep((next - now).min(Duration::from_millis(2)));
                        continue;
                    }
                    next += interval;
                    if wrng.random_bool(0.75) {
                        let id = wrng.random_range(0..id_space);
                        let emb = unit_vec(dim, &mut wrng);
                        let attrs = vec![
                            attr_list(universe, 3, &mut wrng),
                            attr_list(universe, 2, &mut wrng),
                        ];
                        let norm = normalize_upsert(&icfg, &emb, &attrs).unwrap();
                        // History first: anything a query can observe is
                        // already recorded.
                        history.write().unwrap().entry(id).or_default().push((emb.clone(), norm.clone()));
                        log.append_upsert(id, &emb, &norm).unwrap();
                    } else {
                        log.append_delete(wrng.random_range(0..id_space)).unwrap();
                    }
                    appended += 1;
                }
                log.sync().unwrap();
                appended
            })
        });

        let mut qrng = ChaCha8Rng::seed_from_u64(0xBEEF + rate);
        let mut queries = 0u64;
        let mut violations = 0u64;
        let mut latencies = Vec::new();
        while Instant::now() < deadline {
            let emb = unit_vec(dim, &mut qrng);
            let filter = vec![attr_list(universe, 2, &mut qrng), attr_list(universe, 2, &mut qrng)];
            let algo = if queries % 2 == 0 { Algo::V1 } else { Algo::V2 };
            let q = Query::new(emb, QueryFilter::new(filter.clone()), 10).with_algo(algo);
            let t = Instant::now();
            let res = searcher.query(&DotScorer, &q).unwrap();
            latencies.push(t.elapsed().as_secs_f64() * 1e3);

            let ordered = res.hits.windows(2).all(|w| {
                w[0].score > w[1].score || (w[0].score == w[1].score && w[0].slot < w[1].slot)
            });
            if !ordered || res.hits.len() > 10 {
                violations += 1;
            }
            let hist = history.read().unwrap();
            for hit in &res.hits {
                if !hit_is_sound(hit, &q.embedding, q.filter.clauses(), &icfg.clauses, &hist) {
                    violations += 1;
                    if violations <= 3 {
                        eprintln!(
                            "criterion 5: unsound hit id {} score {} at rate {rate}",
                            hit.id, hit.score
                        );
                    }
                }
            }
            drop(hist);
            queries += 1;
        }

        let appended = writer.map_or(0, |w| w.join().unwrap());
        (appended, queries, violations, latencies)
    });

    // Drain: the updator must reach the final appended seq.
    let want_seq = base_n + appended;
    let drain_deadline = Instant::now() + Duration::from_secs(20);
    while updator.gauges().applied_seq < want_seq {
        assert!(Instant::now() < drain_deadline, "updator failed to drain to seq {want_seq}");
        std::thread::sleep(Duration::from_millis(5));
    }
    let gauges = updator.gauges();
    let index = updator.stop();

    let records = read_log(&log_path, &icfg).unwrap();
    assert_eq!(records.len() as u64, want_seq, "log holds every appended record");
    let mut oracle = Index::create(icfg.clone()).unwrap();
    for rec in &records {
        oracle.apply(rec).unwrap();
    }
    let replay_ok = logical_state(&index) == logical_state(&oracle) && gauges.poisoned == 0;

    LiveRunOutcome {
        queries,
        violations,
        replay_ok,
        mean_ms: linr_bench::metrics::mean(&latencies),
        p95_ms: linr_bench::metrics::p95(&latencies),
    }
}

// Criterion 5: with a concurrent updator at 0, 300, and 600 records/sec for
// 60 s each, every query is filter-sound and snapshot-consistent and the
// post-run state equals a full replay of the log. Latency is reported, not
// asserted.
#[test]
fn criterion_5_live_update_correctness() {
    let window = Duration::from_secs(60);
    let rates = [0u64, 300, 600];
    let outcomes: Vec<LiveRunOutcome> =
        rates.iter().map(|&r| live_window(r, window)).collect();

    let total_violations: u64 = outcomes.iter().map(|o| o.violations).sum();
    let all_replay = outcomes.iter().all(|o| o.replay_ok);
    let pass = total_violations == 0 && all_replay;
    report(
        5,
        pass,
        &format!(
            "live-update: 60s windows at 0/300/600 rec/s; {}/{}/{} queries checked, \
             {total_violations} violations, replay oracle matched at every rate = {all_replay}; \
             mean latency {:.3}/{:.3}/{:.3} ms, p95 {:.3}/{:.3}/{:.3} ms (reported, not asserted)",
            outcomes[0].queries,
            outcomes[1].queries,
            outcomes[2].queries,
            outcomes[0].mean_ms,
            outcomes[1].mean_ms,
            outcomes[2].mean_ms,
            outcomes[0].p95_ms,
            outcomes[1].p95_ms,
            outcomes[2].p95_ms
        ),
    );
}

// Criterion 6: on 1000-operation random histories, restoring a snapshot cut
// at a random seq and tailing the rest reproduces the full-replay state
// exactly, 100 trials out of 100.
#[test]
fn criterion_6_bootstrap_equivalence() {
    let dim = 8;
    let icfg = IndexConfig {
        capacity: 400,
        dim,
        clauses: vec![ClauseSpec { name: "tag".into(), polarity: Polarity::Match, max_attrs: 3 }],
        quant_bits: 64,
        seed: 2,
        memory_budget_bytes: None,
    };
    let trials = 100;
    let ops_per_trial = 1000u64;
    let mut equal_trials = 0;

    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACC6 + trial);
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("history.jsonl");
        {
            let mut log = LogWriter::open(&log_path, &icfg).unwrap();
            for _ in 0..ops_per_trial {
                let id = rng.random_range(0..200u64);
                if rng.random_bool(0.75) {
                    let emb: Vec<f32> =
                        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let attrs = vec![attr_list(30, 2, &mut rng)];
                    log.append_upsert(id, &emb, &attrs).unwrap();
                } else {
                    log.append_delete(id).unwrap();
                }
            }
        }

        let full = bootstrap(None, &log_path, &icfg).unwrap();
        assert_eq!(full.poisoned, 0);

        let records = read_log(&log_path, &icfg).unwrap();
        let cut = rng.random_range(0..=ops_per_trial) as usize;
        let mut prefix = Index::create(icfg.clone()).unwrap();
        for rec in &records[..cut] {
            prefix.apply(rec).unwrap();
        }
        let snap_path = dir.path().join("cut.lnrs");
        write_snapshot(&prefix, &snap_path).unwrap();

        let resumed = bootstrap(Some(&snap_path), &log_path, &icfg).unwrap();
        assert_eq!(resumed.poisoned, 0);
        if logical_state(&resumed.index) == logical_state(&full.index) {
            equal_trials += 1;
        }
    }

    let pass = equal_trials == trials;
    report(
        6,
        pass,
        &format!(
            "bootstrap equivalence: {equal_trials}/{trials} random-cut snapshot+tail \
             states identical to full replay (1000 ops per history)"
        ),
    );
}

fn random_linear(out: usize, inp: usize, act: Activation, rng: &mut ChaCha8Rng) -> Mlp {
    let w: Vec<f32> = (0..out * inp).map(|_| rng.random_range(-0.8..0.8)).collect();
    let b: Vec<f32> = (0..out).map(|_| rng.random_range(-0.3..0.3)).collect();
    Mlp::new(vec![Layer::new(Matrix::new(out, inp, w).unwrap(), b, act).unwrap()]).unwrap()
}

// Criterion 7: gate rows sum to 1 within 1e-6 over 10^3 random pairs; a
// one-component mixture ranks exactly like its component; the identity
// Hadamard MLP ranks exactly like the dot product; the k-means objective
// never increases across iterations, over 20 seeds.
#[test]
fn criterion_7_scorer_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC7);
    let dim = 6;
    let no_features = std::collections::BTreeMap::new();

    // Gate normalization through real random weights. The gate input is the
    // documented layout: query blocks in component order, then item blocks.
    let model = MolModel {
        components: vec![
            MolComponent {
                name: "two_tower".into(),
                query_mlp: random_linear(5, dim, Activation::Relu, &mut rng),
                item_mlp: random_linear(5, dim, Activation::Identity, &mut rng),
            },
            MolComponent {
                name: "two_tower".into(),
                query_mlp: random_linear(5, dim, Activation::Identity, &mut rng),
                item_mlp: random_linear(5, dim, Activation::Relu, &mut rng),
            },
        ],
        gate: random_linear(2, 4 * dim, Activation::Identity, &mut rng),
        clusters: None,
        cosine: true,
    };
    let mut max_gate_dev = 0.0f32;
    let mut max_score_dev = 0.0f32;
    for _ in 0..1000 {
        let q = unit_vec(dim, &mut rng);
        let x = unit_vec(dim, &mut rng);
        let mut gate_in = Vec::with_capacity(4 * dim);
        gate_in.extend_from_slice(&q);
        gate_in.extend_from_slice(&q);
        gate_in.extend_from_slice(&x);
        gate_in.extend_from_slice(&x);
        let mut probs = model.gate.forward(&gate_in);
        softmax_in_place(&mut probs);
        max_gate_dev = max_gate_dev.max((probs.iter().sum::<f32>() - 1.0).abs());

        // Tie the reconstruction to the real scoring path: the mixture of
        // per-component deltas under these probs must equal the model score.
        let qv = QueryVector { embedding: &q, features: &no_features };
        let got = model.score_one(&qv, &x).unwrap();
        let want: f32 = model
            .components
            .iter()
            .zip(&probs)
            .map(|(c, p)| p * cosine(&c.query_mlp.forward(&q), &c.item_mlp.forward(&x)))
            .sum();
        max_score_dev = max_score_dev.max((got - want).abs());
    }
    let gate_ok = max_gate_dev <= 1e-6 && max_score_dev <= 1e-5;

    // K=1: the mixture weight is exactly 1, so ranking equals the bare
    // component's ranking, bit for bit.
    let single = MolModel {
        components: vec![MolComponent {
            name: "two_tower".into(),
            query_mlp: random_linear(4, dim, Activation::Relu, &mut rng),
            item_mlp: random_linear(4, dim, Activation::Identity, &mut rng),
        }],
        gate: random_linear(1, 2 * dim, Activation::Identity, &mut rng),
        clusters: None,
        cosine: true,
    };
    let q = unit_vec(dim, &mut rng);
    let qv = QueryVector { embedding: &q, features: &no_features };
    let items: Vec<Vec<f32>> = (0..200).map(|_| unit_vec(dim, &mut rng)).collect();
    let comp = &single.components[0];
    let q_proj = comp.query_mlp.forward(&q);
    let mut by_mol: Vec<(usize, f32)> = items
        .iter()
        .enumerate()
        .map(|(i, x)| (i, single.score_one(&qv, x).unwrap()))
        .collect();
    let mut by_comp: Vec<(usize, f32)> = items
        .iter()
        .enumerate()
        .map(|(i, x)| (i, cosine(&q_proj, &comp.item_mlp.forward(x))))
        .collect();
    let rank = |v: &mut Vec<(usize, f32)>| {
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    };
    rank(&mut by_mol);
    rank(&mut by_comp);
    let k1_ok = by_mol.iter().map(|p| p.0).eq(by_comp.iter().map(|p| p.0));

    // Identity Hadamard through the whole engine equals the dot product.
    let icfg = IndexConfig {
        capacity: 500,
        dim: 16,
        clauses: vec![],
        quant_bits: 0,
        seed: 0,
        memory_budget_bytes: None,
    };
    let mut index = Index::create(icfg).unwrap();
    for id in 0..500u64 {
        let emb: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        index.upsert(id, &emb, &[]).unwrap();
    }
    let searcher = index.searcher();
    let hadamard = HadamardMlpScorer::new(HadamardMlp::identity());
    let mut hadamard_ok = true;
    for _ in 0..20 {
        let emb: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = Query::new(emb, QueryFilter::match_all(0), 50);
        let h = searcher.query(&hadamard, &q).unwrap();
        let d = searcher.query(&DotScorer, &q).unwrap();
        hadamard_ok &= h.hits == d.hits;
    }

    // Spherical k-means: the traced objective never increases.
    let mut kmeans_ok = true;
    let mut worst_rise = 0.0f64;
    for seed in 0..20u64 {
        let mut prng = ChaCha8Rng::seed_from_u64(0x5EED + seed);
        let data: Vec<f32> = (0..200 * 8).map(|_| prng.random_range(-1.0..1.0)).collect();
        let points = Matrix::new(200, 8, data).unwrap();
        let trace = kmeans_trace(&points, 6, seed, 25).unwrap();
        for w in trace.objectives.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
            kmeans_ok &= w[1] <= w[0] + 1e-9;
        }
    }

    let pass = gate_ok && k1_ok && hadamard_ok && kmeans_ok;
    report(
        7,
        pass,
        &format!(
            "scorers: gate rows sum to 1 within {max_gate_dev:.1e} (limit 1e-6) and mixture \
             recomposition within {max_score_dev:.1e} on 10^3 pairs; K=1 mixture ranking == \
             component ranking over 200 items = {k1_ok}; identity-Hadamard top-50 == dot \
             top-50 on 20 queries = {hadamard_ok}; k-means objective non-increasing over 20 \
             seeds = {kmeans_ok} (worst rise {worst_rise:.1e})"
        ),
    );
}

// Criterion 8: absolute GPU-scale latencies, production hit-rate and A/B
// lifts, and 15.5M/1B-item runs are out of reach on desk hardware and are
// covered by criteria 1-7 instead, plus this directional check: on fixtures
// where under 1% of items pass the filter, V2 (pre-filter then score) beats
// V1 (score everything, mask) on average latency.
#[test]
fn criterion_8_directional_substitute() {
    let cfg = BenchConfig {
        n_items: 50_000,
        dim: 64,
        quant_bits: 0,
        n_clusters: 20,
        cluster_std: 0.35,
        clauses: vec![ClauseProfile {
            name: "topic".into(),
            polarity: Polarity::Match,
            universe: 2000,
            min_attrs: 1,
            max_attrs: 2,
            selectivity: 0.005,
        }],
        n_queries: 300,
        k: 100,
        algos: vec![
            AlgoSpec { algo: Algo::V1, keep_fraction: 1.0 },
            AlgoSpec { algo: Algo::V2, keep_fraction: 1.0 },
        ],
        batch_sizes: vec![1],
        update_rate: 0,
        seed: 0xACC8,
    };
    let dir = tempfile::tempdir().unwrap();
    let fx = linr_bench::gen_synthetic(&cfg, dir.path()).unwrap();
    let rep = run_benchmark(&fx.changelog, &fx.queries, &cfg).unwrap();
    let v1 = rep.rows.iter().find(|r| r.algo == "v1").unwrap();
    let v2 = rep.rows.iter().find(|r| r.algo == "v2").unwrap();

    let low_pass = v1.mean_pass_rate < 0.01 && v2.mean_pass_rate < 0.01;
    let exact = v1.recall == 1.0 && v2.recall == 1.0;
    let directional = v2.avg_ms < v1.avg_ms;
    let pass = low_pass && exact && directional;
    report(
        8,
        pass,
        &format!(
            "substitutes: GPU-scale absolute latencies and production-traffic lifts are not \
             measurable here and are covered by criteria 1-7; directional check on low-pass \
             fixtures (mean pass rate {:.4}): v2 avg {:.3} ms < v1 avg {:.3} ms = \
             {directional}, both at recall 1.0",
            v1.mean_pass_rate, v2.avg_ms, v1.avg_ms
        ),
    );
}
