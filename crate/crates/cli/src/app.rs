//! Wiring configuration to providers and on-disk artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use kgcqr::corpus::load_corpus;
use kgcqr::pipeline::{CqrPipeline, TtrVectors};
use kgcqr::providers::{load_mock_rules, ChatModel, Embedder, MockChat, MockEmbedder, OpenAiClient};
use kgcqr::retrieval::{Bm25Index, Retriever};
use kgcqr::template::TemplateSet;
use kgcqr::{Document, KnowledgeGraph, VectorIndex};

use crate::config::AppConfig;
use crate::UsageError;

pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const DOC_INDEX_FILE: &str = "doc.idx";
pub const TTR_INDEX_FILE: &str = "ttr.idx";

pub struct Providers {
    pub chat: Arc<dyn ChatModel>,
    pub embedder: Arc<dyn Embedder>,
}

/// The configured HTTP provider, or deterministic mocks.
pub fn providers(cfg: &AppConfig, mock: bool) -> Result<Providers> {
    if mock {
        let rules = match &cfg.mock_rules {
            Some(path) => {
                require_file(path, "mock rule file")?;
                load_mock_rules(path)?
            }
            None => Vec::new(),
        };
        let embedder = MockEmbedder::new(cfg.provider.embedding_dim).map_err(|e| UsageError(e.to_string()))?;
        return Ok(Providers {
            chat: Arc::new(MockChat::with_rules(rules)),
            embedder: Arc::new(embedder),
        });
    }
    let client = Arc::new(OpenAiClient::new(cfg.provider.clone()).map_err(|e| UsageError(e.to_string()))?);
    Ok(Providers {
        chat: client.clone(),
        embedder: client,
    })
}

pub fn templates(cfg: &AppConfig) -> Result<TemplateSet> {
    match &cfg.paths.templates_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(UsageError(format!("templates directory not found: {}", dir.display())).into());
            }
            Ok(TemplateSet::load_dir(dir)?)
        }
        None => Ok(TemplateSet::builtin()),
    }
}

/// Fails with a usage error naming `path` when it is not a file.
pub fn require_file(path: &Path, what: &str) -> Result<(), UsageError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} not found: {}", path.display())))
    }
}

/// A path from the command line, else from the config, else an error.
pub fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf, UsageError> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| UsageError(format!("no {what} given on the command line or in the config")))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    require_file(path, "corpus file")?;
    load_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn read_kg(dir: &Path) -> Result<KnowledgeGraph> {
    let path = dir.join(TRIPLETS_FILE);
    require_file(&path, "knowledge graph")?;
    KnowledgeGraph::load(&path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_index(path: &Path, what: &str) -> Result<VectorIndex> {
    require_file(path, what)?;
    VectorIndex::load(path).with_context(|| format!("reading {}", path.display()))
}

/// Loads the graph, indices and (when a corpus is configured) BM25, and
/// assembles the retrievers.
pub fn load_retriever(cfg: &AppConfig, providers: &Providers) -> Result<Retriever> {
    let kg = read_kg(&pick(None, &cfg.paths.kg, "paths.kg")?)?;
    let ttr_index = read_index(&pick(None, &cfg.paths.ttr_index, "paths.ttr_index")?, "TTR index")?;
    let doc_index = read_index(&pick(None, &cfg.paths.doc_index, "paths.doc_index")?, "document index")?;
    let bm25 = match &cfg.paths.corpus {
        Some(path) => Some(Arc::new(Bm25Index::build(&read_corpus(path)?)?)),
        None => None,
    };
    let ttr = TtrVectors::new(&kg, ttr_index).context("TTR index does not match the graph; re-run `kgcqr index`")?;
    log::info!(
        "loaded {} triplets, {} documents{}",
        kg.len(),
        doc_index.len(),
        if bm25.is_some() { ", BM25 ready" } else { "" }
    );
    let pipeline = CqrPipeline::new(
        Arc::new(kg),
        Arc::new(ttr),
        providers.chat.clone(),
        providers.embedder.clone(),
        Arc::new(templates(cfg)?),
        cfg.params,
    )?;
    Ok(Retriever::new(pipeline, Arc::new(doc_index), bm25)?)
}
