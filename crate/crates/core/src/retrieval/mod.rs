//! Retrievers, evaluation metrics and the completion benchmark.

mod bench;
mod bm25;
mod metrics;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{bench_completion, write_bench_csv, BenchMode, BenchRow};
pub use bm25::{Bm25Index, Bm25Params};
pub use metrics::{average_precision, recall_at_k, MetricsReport, QueryMetrics, RECALL_CUTOFFS};

use crate::corpus::EvalRecord;
use crate::index::{Hit, IndexError, VectorIndex};
use crate::pipeline::{ContextResult, CqrPipeline, PipelineError};
use crate::providers::{ChatModel, Embedder, ProviderError};
use crate::template::{PromptTemplate, TemplateError, TemplateId};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Documents ranked for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranking: Vec<ScoredDoc>,
}

impl RankedResult {
    pub fn from_hits(query_id: &str, hits: Vec<Hit>) -> Self {
        Self {
            query_id: query_id.to_string(),
            ranking: hits
                .into_iter()
                .map(|h| ScoredDoc {
                    doc_id: h.key,
                    score: h.score,
                })
                .collect(),
        }
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.ranking.iter().map(|d| d.doc_id.clone()).collect()
    }

    /// 1-based rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.ranking.iter().position(|d| d.doc_id == doc_id).map(|i| i + 1)
    }

    /// Checks that scores are non-increasing and ids unique.
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let mut seen = std::collections::HashSet::new();
        for (i, d) in self.ranking.iter().enumerate() {
            if !seen.insert(&d.doc_id) {
                return Err(RetrievalError::Validation(format!("duplicate doc_id {}", d.doc_id)));
            }
            if i > 0 && self.ranking[i - 1].score < d.score {
                return Err(RetrievalError::Validation(format!("scores increase at position {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrieverKind {
    /// Dense search with the fused query/context vector.
    Dense,
    /// Dense search with the query embedding alone.
    Plain,
    Bm25,
    /// BM25 over the query followed by the generated context.
    Bm25Cqr,
    /// Dense search with the embedding of an LLM-written hypothetical document.
    Hyde,
}

impl RetrieverKind {
    pub const ALL: [RetrieverKind; 5] = [
        RetrieverKind::Dense,
        RetrieverKind::Plain,
        RetrieverKind::Bm25,
        RetrieverKind::Bm25Cqr,
        RetrieverKind::Hyde,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Dense => "dense",
            RetrieverKind::Plain => "plain",
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Bm25Cqr => "bm25-cqr",
            RetrieverKind::Hyde => "hyde",
        }
    }

    pub fn uses_context(self) -> bool {
        matches!(self, RetrieverKind::Dense | RetrieverKind::Bm25Cqr)
    }
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetrieverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown retriever {s:?} (expected dense, plain, bm25, bm25-cqr or hyde)"))
    }
}

/// Ranks documents by inner product with `vector`.
pub fn dense_search(
    query_id: &str,
    vector: &[f64],
    doc_index: &VectorIndex,
    top_n: usize,
) -> Result<RankedResult, RetrievalError> {
    Ok(RankedResult::from_hits(query_id, doc_index.search(vector, top_n)?))
}

/// Dense retrieval with the plain query embedding.
pub fn plain_retrieve(
    query_id: &str,
    query: &str,
    embedder: &dyn Embedder,
    doc_index: &VectorIndex,
    top_n: usize,
) -> Result<RankedResult, RetrievalError> {
    let v = embedder.embed_one(query)?;
    dense_search(query_id, &v.to_f64(), doc_index, top_n)
}

/// Dense retrieval with the fused vector of `ctx` at weight `alpha`.
pub fn cqr_retrieve(
    query_id: &str,
    ctx: &ContextResult,
    alpha: f64,
    doc_index: &VectorIndex,
    top_n: usize,
) -> Result<RankedResult, RetrievalError> {
    dense_search(query_id, &ctx.fused_with(alpha)?, doc_index, top_n)
}

/// BM25 over `query` and `context_text` joined by a single space.
pub fn sparse_cqr_retrieve(
    query_id: &str,
    query: &str,
    context_text: &str,
    bm25: &Bm25Index,
    top_n: usize,
) -> Result<RankedResult, RetrievalError> {
    if context_text.is_empty() {
        return bm25.search(query_id, query, top_n);
    }
    bm25.search(query_id, &format!("{query} {context_text}"), top_n)
}

/// Writes a hypothetical answer document for `query` and searches with its
/// embedding.
pub fn hyde_retrieve(
    query_id: &str,
    query: &str,
    chat: &dyn ChatModel,
    template: &PromptTemplate,
    embedder: &dyn Embedder,
    doc_index: &VectorIndex,
    top_n: usize,
) -> Result<RankedResult, RetrievalError> {
    template.expect_id(TemplateId::Hyde)?;
    let doc = chat.chat(&template.request(&[("query", query)])?)?;
    if doc.trim().is_empty() {
        return Err(RetrievalError::Validation("hypothetical document is empty".into()));
    }
    let v = embedder.embed_one(doc.trim())?;
    dense_search(query_id, &v.to_f64(), doc_index, top_n)
}

/// A ranking and, for context-based retrievers, the contextualization.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub result: RankedResult,
    pub context: Option<ContextResult>,
}

/// All retrievers over one set of shared, immutable indices.
#[derive(Debug, Clone)]
pub struct Retriever {
    pipeline: CqrPipeline,
    doc_index: Arc<VectorIndex>,
    bm25: Option<Arc<Bm25Index>>,
}

impl Retriever {
    pub fn new(
        pipeline: CqrPipeline,
        doc_index: Arc<VectorIndex>,
        bm25: Option<Arc<Bm25Index>>,
    ) -> Result<Self, RetrievalError> {
        if doc_index.dim() != pipeline.embedder().dim() {
            return Err(RetrievalError::Index(IndexError::DimensionMismatch {
                expected: doc_index.dim(),
                got: pipeline.embedder().dim(),
            }));
        }
        Ok(Self {
            pipeline,
            doc_index,
            bm25,
        })
    }

    pub fn pipeline(&self) -> &CqrPipeline {
        &self.pipeline
    }

    pub fn doc_index(&self) -> &VectorIndex {
        &self.doc_index
    }

    fn bm25(&self) -> Result<&Bm25Index, RetrievalError> {
        self.bm25
            .as_deref()
            .ok_or_else(|| RetrievalError::Validation("BM25 retrieval needs a corpus".into()))
    }

    /// Runs one query. `alpha` overrides the pipeline's fusion weight.
    pub fn retrieve(
        &self,
        kind: RetrieverKind,
        query_id: &str,
        query: &str,
        alpha: Option<f64>,
        top_n: usize,
    ) -> Result<Retrieval, RetrievalError> {
        let alpha = alpha.unwrap_or(self.pipeline.params().alpha);
        if !(0.0..=1.0).contains(&alpha) {
            return Err(RetrievalError::Validation(format!("alpha {alpha} outside [0, 1]")));
        }
        if top_n == 0 {
            return Err(RetrievalError::Validation("top_n must be positive".into()));
        }
        let context = if kind.uses_context() {
            Some(self.pipeline.contextualize(query)?)
        } else {
            None
        };
        let p = &self.pipeline;
        let result = match kind {
            RetrieverKind::Dense => cqr_retrieve(query_id, context.as_ref().unwrap(), alpha, &self.doc_index, top_n)?,
            RetrieverKind::Plain => plain_retrieve(query_id, query, p.embedder(), &self.doc_index, top_n)?,
            RetrieverKind::Bm25 => self.bm25()?.search(query_id, query, top_n)?,
            RetrieverKind::Bm25Cqr => {
                let text = &context.as_ref().unwrap().context_text;
                sparse_cqr_retrieve(query_id, query, text, self.bm25()?, top_n)?
            }
            RetrieverKind::Hyde => hyde_retrieve(
                query_id,
                query,
                p.chat(),
                &p.templates().hyde,
                p.embedder(),
                &self.doc_index,
                top_n,
            )?,
        };
        Ok(Retrieval { result, context })
    }

    /// Retrieves for every record concurrently and scores the rankings.
    /// Results come back in record order.
    pub fn evaluate(
        &self,
        kind: RetrieverKind,
        records: &[EvalRecord],
        alpha: Option<f64>,
        top_n: usize,
        keep_per_query: bool,
    ) -> Result<(Vec<RankedResult>, MetricsReport), RetrievalError> {
        let results = records
            .par_iter()
            .map(|r| self.retrieve(kind, &r.query_id, &r.query, alpha, top_n).map(|x| x.result))
            .collect::<Result<Vec<_>, _>>()?;
        let per_query = results
            .iter()
            .zip(records)
            .map(|(res, rec)| QueryMetrics::compute(res, &rec.relevant_doc_ids, &RECALL_CUTOFFS))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((results, MetricsReport::aggregate(per_query, keep_per_query)?))
    }
}
