//! `linr`: operator CLI for the embedding retrieval engine.
//!
//! Exit codes: 0 success, 1 usage problem, 2 data or runtime problem.

mod commands;
mod config;
mod service;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong; prints usage and exits 1.
    Usage(String),
    /// Inputs or runtime state are bad; exits 2.
    Data(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<linr_bench::BenchError> for CliError {
    fn from(e: linr_bench::BenchError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<linr_core::Error> for CliError {
    fn from(e: linr_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<linr_ingest::IngestError> for CliError {
    fn from(e: linr_ingest::IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "linr",
    version,
    about = "In-memory embedding retrieval: filtered KNN, quantized search, live updates",
    after_help = "Data files live under LINR_DATA_DIR (default ./data)."
)]
struct Cli {
    /// JSON config file with optional "index", "bench", "scorer" sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the RNG seed in both config sections.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for benchmarks and the service.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes synthetic fixtures (change log + query file) to the data dir.
    Gen,
    /// Replays the change log into a snapshot.
    Build,
    /// Runs the benchmark over generated fixtures and writes a report.
    Bench {
        /// Report path; defaults to <data-dir>/report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serves the index over HTTP.
    Serve {
        /// Address to listen on; port 0 picks a free port.
        #[arg(long, default_value = "127.0.0.1:7171")]
        bind: String,
    },
    /// Sweeps estimator accuracy across code widths.
    QuantizeEval {
        /// Comma-separated code widths in bits, each a positive multiple of 64.
        #[arg(long, default_value = "64,128,256,512")]
        bits: String,
        /// Embedding dimension for the synthetic pairs.
        #[arg(long, default_value_t = 128)]
        dim: usize,
        /// Random unit-vector pairs per width.
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
    /// Folds the snapshot plus change-log tail into a fresh snapshot.
    Snapshot,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // Benchmark oracle precomputation runs on the global pool.
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Data(format!("cannot size thread pool: {e}")))?;
    }
    let seed = cli.seed;
    let res = || config::resolve(cli.config.as_deref(), seed);
    match cli.cmd {
        Cmd::Gen => commands::gen(&res()?),
        Cmd::Build => commands::build(&res()?),
        Cmd::Bench { out } => commands::bench(&res()?, out),
        Cmd::Serve { bind } => {
            service::serve(&res()?, &service::ServeArgs { bind, threads: cli.threads })
        }
        Cmd::QuantizeEval { bits, dim, pairs } => {
            commands::quantize_eval(&bits, dim, pairs, seed.unwrap_or(0))
        }
        Cmd::Snapshot => commands::snapshot(&res()?),
    }
}
