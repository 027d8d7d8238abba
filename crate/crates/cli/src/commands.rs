//! One function per subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgcqr::construction::build_kg as construct;
use kgcqr::corpus::{load_eval, load_queries};
use kgcqr::index::{index_documents, index_triplets};
use kgcqr::pipeline::{ContextResult, TtrVectors};
use kgcqr::retrieval::{bench_completion, write_bench_csv, BenchMode, MetricsReport, RetrieverKind, ScoredDoc};
use serde::Serialize;

use crate::app::{self, pick, require_file, DOC_INDEX_FILE, REPORT_FILE, TRIPLETS_FILE, TTR_INDEX_FILE};
use crate::config::{check_alpha, AppConfig};
use crate::{BenchArgs, BuildKgArgs, EvalArgs, IndexArgs, QueryArgs, UsageError};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn build_kg(cfg: AppConfig, mock: bool, args: BuildKgArgs) -> Result<()> {
    let corpus_path = pick(args.corpus, &cfg.paths.corpus, "corpus (--corpus)")?;
    let out = pick(args.out, &cfg.paths.kg, "output directory (--out)")?;
    let corpus = app::read_corpus(&corpus_path)?;
    let providers = app::providers(&cfg, mock)?;
    let templates = app::templates(&cfg)?;

    let (kg, report) = construct(&corpus, providers.chat.as_ref(), &templates, cfg.chunk).context("build-kg")?;
    for f in &report.failed_documents {
        log::warn!("document {} failed: {}", f.doc_id, f.error);
    }
    create_dir(&out)?;
    kg.save(out.join(TRIPLETS_FILE))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    eprintln!(
        "built {} triplets from {} documents ({} chunks) into {}",
        kg.len(),
        report.documents,
        report.chunks,
        out.display()
    );
    Ok(())
}

pub fn index(cfg: AppConfig, mock: bool, args: IndexArgs) -> Result<()> {
    let kg = app::read_kg(&pick(args.kg, &cfg.paths.kg, "graph directory (--kg)")?)?;
    let corpus = app::read_corpus(&pick(args.corpus, &cfg.paths.corpus, "corpus (--corpus)")?)?;
    let (doc_path, ttr_path) = match args.out {
        Some(dir) => (dir.join(DOC_INDEX_FILE), dir.join(TTR_INDEX_FILE)),
        None => (
            pick(None, &cfg.paths.doc_index, "output directory (--out)")?,
            pick(None, &cfg.paths.ttr_index, "output directory (--out)")?,
        ),
    };
    let providers = app::providers(&cfg, mock)?;

    let docs = index_documents(&corpus, providers.embedder.as_ref()).context("index: embedding documents")?;
    let ttr = index_triplets(&kg, providers.embedder.as_ref()).context("index: embedding triplet descriptions")?;
    for p in [&doc_path, &ttr_path] {
        create_parent(p)?;
    }
    docs.save(&doc_path)?;
    ttr.save(&ttr_path)?;
    eprintln!(
        "indexed {} documents into {} and {} triplets into {}",
        docs.len(),
        doc_path.display(),
        ttr.len(),
        ttr_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct QueryOutput<'a> {
    query: &'a str,
    retriever: RetrieverKind,
    alpha: f64,
    ranking: &'a [ScoredDoc],
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<&'a ContextResult>,
}

pub fn query(mut cfg: AppConfig, mock: bool, args: QueryArgs) -> Result<()> {
    cfg.set_alpha(args.alpha)?;
    if let Some(k) = args.k {
        cfg.params.k_extract = k;
    }
    cfg.params.validate().map_err(|e| UsageError(e.to_string()))?;
    if args.top_n == 0 {
        return Err(UsageError("--top-n must be positive".into()).into());
    }
    if args.query.trim().is_empty() {
        return Err(UsageError("query is empty".into()).into());
    }
    let providers = app::providers(&cfg, mock)?;
    let retriever = app::load_retriever(&cfg, &providers)?;
    let mut out = retriever.retrieve(args.retriever, "query", &args.query, None, args.top_n)?;
    if mock {
        if let Some(ctx) = &mut out.context {
            ctx.trace.zero_timings();
        }
    }

    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if args.json {
        let body = QueryOutput {
            query: &args.query,
            retriever: args.retriever,
            alpha: cfg.params.alpha,
            ranking: &out.result.ranking,
            context: out.context.as_ref(),
        };
        serde_json::to_writer_pretty(&mut w, &body)?;
        writeln!(w)?;
    } else {
        for (i, d) in out.result.ranking.iter().enumerate() {
            writeln!(w, "{}\t{}\t{:.6}", i + 1, d.doc_id, d.score)?;
        }
    }
    Ok(())
}

/// `metrics.json` for a single run, `metrics_alpha{a}.json` per weight in a sweep.
pub fn metrics_file_name(alpha: Option<f64>, sweep: bool) -> String {
    match alpha {
        Some(a) if sweep => format!("metrics_alpha{a}.json"),
        _ => "metrics.json".to_string(),
    }
}

pub fn eval(cfg: AppConfig, mock: bool, args: EvalArgs) -> Result<()> {
    for &a in &args.alpha {
        check_alpha(a)?;
    }
    if args.top_n == 0 {
        return Err(UsageError("--top-n must be positive".into()).into());
    }
    require_file(&args.dataset, "dataset")?;
    let records = load_eval(&args.dataset).with_context(|| format!("reading {}", args.dataset.display()))?;
    if records.is_empty() {
        return Err(UsageError(format!("dataset {} has no queries", args.dataset.display())).into());
    }
    let providers = app::providers(&cfg, mock)?;
    let retriever = app::load_retriever(&cfg, &providers)?;
    create_dir(&args.out)?;

    let alphas: Vec<Option<f64>> = if args.alpha.is_empty() {
        vec![None]
    } else {
        args.alpha.iter().copied().map(Some).collect()
    };
    let sweep = alphas.len() > 1;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "retriever\talpha\tmap\trecall@5\trecall@10\trecall@25\tn_queries")?;
    for alpha in alphas {
        let (_, report) = retriever.evaluate(args.retriever, &records, alpha, args.top_n, args.per_query)?;
        let path: PathBuf = args.out.join(metrics_file_name(alpha, sweep));
        write_json(&path, &report)?;
        let shown = args.retriever.uses_context().then(|| alpha.unwrap_or(cfg.params.alpha));
        print_row(&mut w, args.retriever, shown, &report)?;
    }
    Ok(())
}

fn print_row(w: &mut impl Write, kind: RetrieverKind, alpha: Option<f64>, r: &MetricsReport) -> std::io::Result<()> {
    let rec = |k| r.recall(k).unwrap_or(0.0);
    let alpha = alpha.map_or_else(|| "-".to_string(), |a| a.to_string());
    writeln!(
        w,
        "{kind}\t{alpha}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
        r.map,
        rec(5),
        rec(10),
        rec(25),
        r.n_queries
    )
}

pub fn bench(cfg: AppConfig, mock: bool, args: BenchArgs) -> Result<()> {
    let modes = BenchMode::parse_list(&args.modes).map_err(UsageError)?;
    let kg = app::read_kg(&pick(args.kg, &cfg.paths.kg, "graph directory (--kg)")?)?;
    require_file(&args.queries, "queries file")?;
    let queries = load_queries(&args.queries).with_context(|| format!("reading {}", args.queries.display()))?;
    let providers = app::providers(&cfg, mock)?;

    let index = match (&args.ttr_index, &cfg.paths.ttr_index) {
        (Some(p), _) => app::read_index(p, "TTR index")?,
        (None, Some(p)) if p.is_file() => app::read_index(p, "TTR index")?,
        _ => index_triplets(&kg, providers.embedder.as_ref()).context("bench: embedding triplet descriptions")?,
    };
    let ttr = TtrVectors::new(&kg, index)?;
    let rows = bench_completion(&kg, &ttr, providers.embedder.as_ref(), &queries, &cfg.params, &modes)?;
    match &args.out {
        Some(path) => {
            create_parent(path)?;
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_bench_csv(f, &rows)?;
        }
        None => write_bench_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}
