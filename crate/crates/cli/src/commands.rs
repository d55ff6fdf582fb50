//! Offline subcommands: fixture generation, snapshot builds, benchmarks,
//! and the estimator accuracy sweep.

use std::path::PathBuf;
use std::time::Instant;

use linr_bench::{run_benchmark, render_table, Fixtures};
use linr_core::scoring::cosine;
use linr_core::{est_cosine, matched_bits, OporpParams};
use linr_ingest::{bootstrap, write_snapshot};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{changelog_path, data_dir, snapshot_path, Resolved};
use crate::{CliError, CliResult};

pub fn gen(res: &Resolved) -> CliResult<()> {
    let dir = data_dir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let started = Instant::now();
    let fx = linr_bench::gen_synthetic(&res.bench, &dir)?;
    println!(
        "generated {} items and {} queries in {:.1}s",
        res.bench.n_items,
        res.bench.n_queries,
        started.elapsed().as_secs_f64()
    );
    println!("  change log: {}", fx.changelog.display());
    println!("  queries:    {}", fx.queries.display());
    Ok(())
}

/// Full replay of the change log into a fresh snapshot. Poisoned log lines
/// fail the build: a snapshot is a durability artifact, so it must not
/// silently drop records the way the always-on tailer is allowed to.
pub fn build(res: &Resolved) -> CliResult<()> {
    let log = changelog_path();
    if !log.exists() {
        return Err(CliError::Data(format!(
            "change log {} not found; run `linr gen` or set LINR_DATA_DIR",
            log.display()
        )));
    }
    let started = Instant::now();
    let boot = bootstrap(None, &log, &res.index)?;
    if boot.poisoned > 0 {
        return Err(CliError::Data(format!(
            "{} poisoned change-log lines; refusing to snapshot a lossy replay",
            boot.poisoned
        )));
    }
    write_fresh_snapshot(&boot.index, boot.replayed, started)
}

/// Incremental compaction: fold the existing snapshot plus the log tail
/// into a new snapshot. The log is left untouched; sequence numbers stay
/// monotone across compactions.
pub fn snapshot(res: &Resolved) -> CliResult<()> {
    let log = changelog_path();
    let snap = snapshot_path();
    if !log.exists() && !snap.exists() {
        return Err(CliError::Data(format!(
            "nothing to compact: neither {} nor {} exists",
            log.display(),
            snap.display()
        )));
    }
    let started = Instant::now();
    let base = snap.exists().then(|| snap.clone());
    let boot = bootstrap(base.as_deref(), &log, &res.index)?;
    if boot.poisoned > 0 {
        return Err(CliError::Data(format!(
            "{} poisoned change-log lines; refusing to snapshot a lossy replay",
            boot.poisoned
        )));
    }
    write_fresh_snapshot(&boot.index, boot.replayed, started)
}

fn write_fresh_snapshot(
    index: &linr_core::Index,
    replayed: u64,
    started: Instant,
) -> CliResult<()> {
    let snap = snapshot_path();
    // write_snapshot renames a temp file into place, so an existing
    // snapshot survives a crash mid-write.
    let watermark = write_snapshot(index, &snap)?;
    let bytes = std::fs::metadata(&snap).map(|m| m.len()).unwrap_or(0);
    println!(
        "replayed {replayed} records -> {} live items (seq {watermark}) in {:.1}s",
        index.live_count(),
        started.elapsed().as_secs_f64()
    );
    println!("  snapshot: {} ({bytes} bytes)", snap.display());
    Ok(())
}

pub fn bench(res: &Resolved, out: Option<PathBuf>) -> CliResult<()> {
    let dir = data_dir();
    let fx = Fixtures::in_dir(&dir);
    if !fx.changelog.exists() || !fx.queries.exists() {
        return Err(CliError::Data(format!(
            "fixtures not found under {}; run `linr gen` first",
            dir.display()
        )));
    }
    let report = run_benchmark(&fx.changelog, &fx.queries, &res.bench)?;
    print!("{}", render_table(&report));
    let out = out.unwrap_or_else(|| dir.join("report.json"));
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?;
    std::fs::write(&out, json)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
    println!("report: {}", out.display());
    Ok(())
}

/// Monte-Carlo sweep of the 1-bit estimator: mean |estimated - true|
/// cosine over random unit pairs, per code width.
pub fn quantize_eval(bits: &str, dim: usize, pairs: usize, seed: u64) -> CliResult<()> {
    let widths = parse_bits(bits)?;
    if dim == 0 {
        return Err(CliError::Usage("--dim must be positive".into()));
    }
    if pairs == 0 {
        return Err(CliError::Usage("--pairs must be positive".into()));
    }
    let all_params: Vec<OporpParams> = widths
        .iter()
        .map(|&bits| {
            OporpParams::derive(dim, bits, seed)
                .map_err(|e| CliError::Usage(format!("--bits {bits}: {e}")))
        })
        .collect::<CliResult<_>>()?;
    println!("{:>6}  {:>12}  {:>12}", "bits", "mean_abs_err", "max_abs_err");
    for (&bits, params) in widths.iter().zip(&all_params) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (bits as u64) << 17);
        let mut total = 0.0f64;
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let a = unit_vec(dim, &mut rng);
            let b = unit_vec(dim, &mut rng);
            let ca = params.encode(&a)?;
            let cb = params.encode(&b)?;
            let est = est_cosine(matched_bits(&ca, &cb)?, bits);
            let err = (est as f64 - cosine(&a, &b) as f64).abs();
            total += err;
            worst = worst.max(err);
        }
        println!("{bits:>6}  {:>12.4}  {:>12.4}", total / pairs as f64, worst);
    }
    Ok(())
}

fn parse_bits(arg: &str) -> CliResult<Vec<usize>> {
    let widths: Vec<usize> = arg
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--bits expects comma-separated integers, got {arg:?}")))?;
    if widths.is_empty() {
        return Err(CliError::Usage("--bits must name at least one width".into()));
    }
    Ok(widths)
}

fn unit_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut v: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    } else {
        v[0] = 1.0;
    }
    v
}
