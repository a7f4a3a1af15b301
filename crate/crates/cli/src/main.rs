//! `ivfdb`: ingest fvecs files, build and maintain the IVF index, run
//! (hybrid, batched) queries and benchmark recall and latency.

mod bench;
mod config;
mod ingest;
mod maintain;
mod query;
mod readers;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "ivfdb", version, about = "Embedded IVF vector database")]
struct Cli {
    /// Database file.
    #[arg(long, global = true, env = "MICRONN_DB")]
    db: Option<PathBuf>,

    /// JSON file supplying defaults for any flag not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Search worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Decoded segment cache size in MiB.
    #[arg(long, global = true)]
    cache_mb: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream an fvecs file (and optional attribute lines) into the store.
    Ingest(ingest::Args),
    /// Full rebuild of the IVF index.
    Build(maintain::BuildArgs),
    /// Run one search per query vector and print JSON lines.
    Query(query::Args),
    /// Recall and latency sweep against ground truth.
    Bench(bench::Args),
    /// Delta flush, rebuild, growth statistics or the automatic policy.
    Maintain(maintain::Args),
}

/// Process exit status with a message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn storage(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ivfdb::Error> for Failure {
    fn from(e: ivfdb::Error) -> Self {
        if e.is_validation() {
            Failure::validation(e.to_string())
        } else {
            Failure::storage(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            // reader went away, e.g. `| head`
            return Failure {
                code: 0,
                message: String::new(),
            };
        }
        Failure::storage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        match e.io_error_kind() {
            Some(kind) => std::io::Error::from(kind).into(),
            None => Failure::storage(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Settings shared by every command after merging flags with the config file.
pub struct Context {
    pub db: Option<PathBuf>,
    pub workers: Option<usize>,
    pub cache_mb: Option<usize>,
    pub file: FileConfig,
}

impl Context {
    pub fn db_path(&self) -> CliResult<&PathBuf> {
        self.db
            .as_ref()
            .ok_or_else(|| Failure::validation("no database given: pass --db or set MICRONN_DB"))
    }

    pub fn db_config(&self, dimension: Option<usize>) -> ivfdb::DbConfig {
        let mut cfg = ivfdb::DbConfig::default();
        cfg.dimension = dimension;
        if let Some(w) = self.workers {
            cfg = cfg.search_workers(w);
        }
        if let Some(mb) = self.cache_mb {
            cfg = cfg.cache_bytes(mb << 20);
        }
        cfg
    }

    /// Opens an existing store.
    pub fn open(&self) -> CliResult<ivfdb::Database> {
        let path = self.db_path()?;
        if !path.exists() {
            return Err(Failure::validation(format!("no database at {}", path.display())));
        }
        Ok(ivfdb::Database::open(path, self.db_config(None))?)
    }
}

pub fn print_json(value: &impl serde::Serialize) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context {
        db: cli.db.or_else(|| file.db.clone()),
        workers: cli.workers.or(file.workers),
        cache_mb: cli.cache_mb.or(file.cache_mb),
        file,
    };
    match cli.command {
        Command::Ingest(a) => ingest::run(&ctx, a),
        Command::Build(a) => maintain::build(&ctx, a),
        Command::Query(a) => query::run(&ctx, a),
        Command::Bench(a) => bench::run(&ctx, a),
        Command::Maintain(a) => maintain::run(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if f.code == 0 => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
