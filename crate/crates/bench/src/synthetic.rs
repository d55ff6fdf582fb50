//! Deterministic synthetic fixtures: clustered embeddings plus attribute
//! draws tuned to the configured selectivities. Items land in a change log
//! (the same format the live pipeline tails); queries land in a JSONL file,
//! one `{"qid":…, "emb":[…], "filter":{clause:[attrs]}, "k":…}` per line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use linr_core::{IndexConfig, Query, QueryFilter};
use linr_ingest::LogWriter;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{AlgoSpec, BenchConfig};
use crate::error::{BenchError, Result};

/// One benchmark query as stored on disk. `filter` keys are clause names;
/// a clause absent from the map is unconstrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryFixture {
    pub qid: u64,
    pub emb: Vec<f32>,
    pub filter: BTreeMap<String, Vec<u64>>,
    pub k: usize,
}

/// Paths produced by [`gen_synthetic`].
#[derive(Clone, Debug)]
pub struct Fixtures {
    pub changelog: PathBuf,
    pub queries: PathBuf,
}

impl Fixtures {
    pub fn in_dir(dir: &Path) -> Fixtures {
        Fixtures { changelog: dir.join("changelog.jsonl"), queries: dir.join("queries.jsonl") }
    }
}

/// Generate fixtures under `dir`, replacing any previous ones (the change
/// log is append-only, so a stale file would corrupt determinism). Same
/// config, byte-identical files.
pub fn gen_synthetic(cfg: &BenchConfig, dir: &Path) -> Result<Fixtures> {
    cfg.validate()?;
    let icfg = cfg.index_config();
    icfg.validate().map_err(BenchError::Core)?;
    let query_attrs = cfg.query_attr_counts()?;
    let fixtures = Fixtures::in_dir(dir);
    std::fs::create_dir_all(dir)?;
    for path in [&fixtures.changelog, &fixtures.queries] {
        match std::fs::remove_file(path) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = cluster_centers(cfg.n_clusters, cfg.dim, &mut rng);

    let mut log = LogWriter::open(&fixtures.changelog, &icfg)?;
    for id in 0..cfg.n_items as u64 {
        let emb = clustered_point(&centers, cfg.cluster_std, cfg.dim, &mut rng);
        let attrs: Vec<Vec<u64>> = cfg
            .clauses
            .iter()
            .map(|c| {
                let n = rng.random_range(c.min_attrs..=c.max_attrs);
                draw_distinct(c.universe, n, &mut rng)
            })
            .collect();
        log.append_upsert(id, &emb, &attrs)?;
    }
    log.sync()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&fixtures.queries)?);
    for qid in 0..cfg.n_queries as u64 {
        let emb = clustered_point(&centers, cfg.cluster_std, cfg.dim, &mut rng);
        let mut filter = BTreeMap::new();
        for (c, &n) in cfg.clauses.iter().zip(&query_attrs) {
            if n > 0 {
                filter.insert(c.name.clone(), draw_distinct(c.universe, n, &mut rng));
            }
        }
        let fix = QueryFixture { qid, emb, filter, k: cfg.k };
        serde_json::to_writer(&mut out, &fix)
            .map_err(|e| BenchError::BadFixture(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(fixtures)
}

fn cluster_centers(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    (0..n).map(|_| normalize((0..dim).map(|_| rng.sample(StandardNormal)).collect())).collect()
}

fn clustered_point(centers: &[Vec<f32>], std: f32, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let center = &centers[rng.random_range(0..centers.len())];
    // Per-coordinate scale keeps the expected perturbation norm at `std`
    // regardless of dimension.
    let scale = std / (dim as f32).sqrt();
    let v = (0..dim)
        .map(|i| center[i] + scale * rng.sample::<f32, _>(StandardNormal))
        .collect();
    normalize(v)
}

fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    } else {
        v[0] = 1.0; // a zero draw is measure-zero but must not produce NaN
    }
    v
}

/// `n` distinct values from `0..universe`, sorted.
fn draw_distinct(universe: u64, n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut out = rand::seq::index::sample(rng, universe as usize, n)
        .into_iter()
        .map(|i| i as u64)
        .collect::<Vec<_>>();
    out.sort_unstable();
    out
}

/// Strict reader for the query file.
pub fn read_queries(path: &Path) -> Result<Vec<QueryFixture>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fix: QueryFixture = serde_json::from_str(line).map_err(|e| {
            BenchError::BadQueryFile {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                detail: e.to_string(),
            }
        })?;
        out.push(fix);
    }
    Ok(out)
}

/// Positional attribute lists for `fix` under the index schema, failing on
/// clause names the schema does not know.
pub fn positional_filter(fix: &QueryFixture, icfg: &IndexConfig) -> Result<Vec<Vec<u64>>> {
    let mut named = fix.filter.clone();
    let mut positional = Vec::with_capacity(icfg.clauses.len());
    for spec in &icfg.clauses {
        positional.push(named.remove(&spec.name).unwrap_or_default());
    }
    if let Some(unknown) = named.into_keys().next() {
        return Err(BenchError::BadFixture(format!(
            "query {} names unknown clause {unknown:?}",
            fix.qid
        )));
    }
    Ok(positional)
}

/// Engine query for a fixture, under a given algorithm.
pub fn to_core_query(fix: &QueryFixture, icfg: &IndexConfig, spec: AlgoSpec) -> Result<Query> {
    let positional = positional_filter(fix, icfg)?;
    Ok(Query::new(fix.emb.clone(), QueryFilter::new(positional), fix.k)
        .with_algo(spec.algo)
        .with_keep_fraction(spec.keep_fraction))
}
