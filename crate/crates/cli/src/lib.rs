//! The `kgcqr` command-line tool: graph construction, indexing, querying,
//! evaluation, benchmarking and an HTTP service.

pub mod app;
pub mod commands;
pub mod config;
pub mod serve;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kgcqr::retrieval::RetrieverKind;

/// Invalid input or configuration; reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

#[derive(Debug, Parser)]
#[command(name = "kgcqr", version, about = "Knowledge-graph contextual query retrieval")]
pub struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Use deterministic mock providers instead of the configured HTTP endpoint.
    #[arg(long, global = true)]
    pub mock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract triplets and their descriptions from a corpus.
    BuildKg(BuildKgArgs),
    /// Embed documents and triplet descriptions into vector indices.
    Index(IndexArgs),
    /// Retrieve documents for one query.
    Query(QueryArgs),
    /// Score a retriever on a judged query set.
    Eval(EvalArgs),
    /// Compare completion traversal strategies.
    Bench(BenchArgs),
    /// Serve retrieval over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct BuildKgArgs {
    /// Corpus in JSON lines (defaults to paths.corpus).
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Output directory for triplets.jsonl and report.json (defaults to paths.kg).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Directory holding triplets.jsonl (defaults to paths.kg).
    #[arg(long, value_name = "DIR")]
    pub kg: Option<PathBuf>,
    /// Corpus in JSON lines (defaults to paths.corpus).
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Output directory for doc.idx and ttr.idx (defaults to paths.doc_index and paths.ttr_index).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Query text.
    #[arg(long = "q", value_name = "TEXT")]
    pub query: String,
    /// Fusion weight of the query embedding.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of triplets taken by similarity search.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "dense", value_name = "dense|plain|bm25|bm25-cqr|hyde")]
    pub retriever: RetrieverKind,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Print JSON including the context, subgraph and stage trace.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Judged queries in JSON lines.
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "dense", value_name = "dense|plain|bm25|bm25-cqr|hyde")]
    pub retriever: RetrieverKind,
    /// One or more fusion weights; several values write one metrics file each.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub alpha: Vec<f64>,
    /// Ranking depth used for scoring.
    #[arg(long, default_value_t = 100)]
    pub top_n: usize,
    /// Directory for metrics files.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Include per-query metrics in the report.
    #[arg(long)]
    pub per_query: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory holding triplets.jsonl (defaults to paths.kg).
    #[arg(long, value_name = "DIR")]
    pub kg: Option<PathBuf>,
    /// Queries in JSON lines (query_id, query).
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,
    /// Comma-separated subset of naive_bfs, beam, no_completion.
    #[arg(long, default_value = "naive_bfs,beam,no_completion")]
    pub modes: String,
    /// TTR index (defaults to paths.ttr_index; embedded on the fly when absent).
    #[arg(long, value_name = "FILE")]
    pub ttr_index: Option<PathBuf>,
    /// CSV output file (defaults to standard output).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to bind (defaults to server.bind_addr).
    #[arg(long)]
    pub bind: Option<String>,
    /// Port (defaults to server.port; 0 picks a free port).
    #[arg(long)]
    pub port: Option<u16>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildKg(a) => commands::build_kg(cfg, cli.mock, a),
        Command::Index(a) => commands::index(cfg, cli.mock, a),
        Command::Query(a) => commands::query(cfg, cli.mock, a),
        Command::Eval(a) => commands::eval(cfg, cli.mock, a),
        Command::Bench(a) => commands::bench(cfg, cli.mock, a),
        Command::Serve(a) => serve::run(cfg, cli.mock, a),
    }
}
