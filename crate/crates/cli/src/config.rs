//! CLI configuration: one JSON file with optional sections, plus the data
//! directory convention shared by every subcommand.
//!
//! Layout under the data dir (`LINR_DATA_DIR`, default `./data`):
//!   changelog.jsonl   append-only change log; the single source of truth
//!   queries.jsonl     benchmark query fixtures
//!   index.lnrs        snapshot, produced by `build` / `snapshot`
//!   report.json       last benchmark report

use std::path::{Path, PathBuf};

use linr_bench::BenchConfig;
use linr_core::scoring::ScorerSpec;
use linr_core::IndexConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Index geometry for build/serve/snapshot. Defaults to the geometry
    /// the bench section implies, so one file drives the whole pipeline.
    #[serde(default)]
    pub index: Option<IndexConfig>,
    /// Fixture and benchmark settings for gen/bench.
    #[serde(default)]
    pub bench: Option<BenchConfig>,
    /// Scorer the service answers queries with. The benchmark always
    /// scores with the dot product so reports stay comparable.
    #[serde(default)]
    pub scorer: Option<ScorerSpec>,
}

/// Config after defaulting, seed override, and validation.
pub struct Resolved {
    pub index: IndexConfig,
    pub bench: BenchConfig,
    pub scorer: ScorerSpec,
}

/// A missing config file is a usage problem (the flag pointed nowhere);
/// a file that exists but does not parse or validate is a data problem.
pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> CliResult<Resolved> {
    let file = match path {
        None => FileConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Data(format!("config {}: {e}", p.display()))
            })?
        }
    };

    let mut bench = file.bench.unwrap_or_else(BenchConfig::desk_default);
    if let Some(s) = seed {
        bench.seed = s;
    }
    bench
        .validate()
        .map_err(|e| CliError::Data(format!("bench config: {e}")))?;

    let mut index = file.index.unwrap_or_else(|| bench.index_config());
    if let Some(s) = seed {
        index.seed = s;
    }
    index
        .validate()
        .map_err(|e| CliError::Data(format!("index config: {e}")))?;

    Ok(Resolved { index, bench, scorer: file.scorer.unwrap_or(ScorerSpec::Dot) })
}

pub fn data_dir() -> PathBuf {
    std::env::var_os("LINR_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

pub fn changelog_path() -> PathBuf {
    data_dir().join("changelog.jsonl")
}

pub fn snapshot_path() -> PathBuf {
    data_dir().join("index.lnrs")
}
