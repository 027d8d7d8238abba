//! Query contextualization over a knowledge graph.
//!
//! [`CqrPipeline::contextualize`] runs
//! extract → filter → complete → generate → fuse and returns the context
//! passage, the final subgraph, the fused search vector, and a trace with
//! per-stage timings and counts.

mod beam;
mod stages;
mod subgraph;

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beam::{bfs_beam, TraversalStats, UNBOUNDED};
pub use stages::{
    complete_subgraph, connecting_paths, extract_subgraph, filter_subgraph, fuse, generate_context,
    is_affirmative, CompletionStats, FilterStats, ScoredPath, TtrVectors,
};
pub use subgraph::{triplet_line, ScoredTriplet, Subgraph};

use crate::index::IndexError;
use crate::kg::KnowledgeGraph;
use crate::providers::{ChatModel, Embedder, EmbeddingVector, ProviderError};
use crate::template::{TemplateError, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extract,
    Filter,
    Complete,
    Generate,
    Fuse,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Extract,
        Stage::Filter,
        Stage::Complete,
        Stage::Generate,
        Stage::Fuse,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Extract => "extract",
            Stage::Filter => "filter",
            Stage::Complete => "complete",
            Stage::Generate => "generate",
            Stage::Fuse => "fuse",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("TTR index does not match the graph: {0}")]
    Integrity(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("generation returned an empty context for a non-empty subgraph")]
    EmptyContext,
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    fn at(self, stage: Stage) -> Self {
        PipelineError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    /// Number of triplets taken by similarity search.
    pub k_extract: usize,
    /// Maximum number of triplets added by completion.
    pub k_complete: usize,
    /// Maximum path length, in edges, explored by completion.
    pub max_path_len: usize,
    /// Outgoing edges kept per expanded node.
    pub beam_width: usize,
    /// Weight of the query embedding in the fused vector.
    pub alpha: f64,
    pub filter_enabled: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            k_extract: 20,
            k_complete: 20,
            max_path_len: 3,
            beam_width: 3,
            alpha: 0.7,
            filter_enabled: true,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("k_extract", self.k_extract),
            ("k_complete", self.k_complete),
            ("max_path_len", self.max_path_len),
            ("beam_width", self.beam_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(PipelineError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PipelineError::InvalidParams(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    pub stage: Stage,
    pub wall_ms: f64,
    pub triplets_in: usize,
    pub triplets_out: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub stages: Vec<StageTrace>,
    pub filter: FilterStats,
    pub completion: CompletionStats,
}

impl Trace {
    fn record(&mut self, stage: Stage, started: Instant, triplets_in: usize, triplets_out: usize) {
        self.stages.push(StageTrace {
            stage,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            triplets_in,
            triplets_out,
        });
    }

    /// Sets every timing to zero, leaving only deterministic fields.
    pub fn zero_timings(&mut self) {
        for s in &mut self.stages {
            s.wall_ms = 0.0;
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageTrace> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextResult {
    pub query: String,
    pub context_text: String,
    pub subgraph: Subgraph,
    #[serde(skip)]
    pub query_vector: EmbeddingVector,
    #[serde(skip)]
    pub context_vector: Option<EmbeddingVector>,
    #[serde(skip)]
    pub fused_vector: Vec<f64>,
    pub trace: Trace,
}

impl ContextResult {
    /// The search vector for another fusion weight. Without a context this
    /// is the query vector whatever `alpha` is.
    pub fn fused_with(&self, alpha: f64) -> Result<Vec<f64>, PipelineError> {
        match &self.context_vector {
            Some(ctx) => fuse(&self.query_vector, ctx, alpha),
            None => Ok(self.query_vector.to_f64()),
        }
    }
}

/// A ready-to-serve contextualizer over an immutable graph and TTR index.
#[derive(Clone)]
pub struct CqrPipeline {
    kg: Arc<KnowledgeGraph>,
    ttr: Arc<TtrVectors>,
    chat: Arc<dyn ChatModel>,
    embedder: Arc<dyn Embedder>,
    templates: Arc<TemplateSet>,
    params: PipelineParams,
}

impl fmt::Debug for CqrPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CqrPipeline")
            .field("triplets", &self.kg.len())
            .field("params", &self.params)
            .finish()
    }
}

impl CqrPipeline {
    pub fn new(
        kg: Arc<KnowledgeGraph>,
        ttr: Arc<TtrVectors>,
        chat: Arc<dyn ChatModel>,
        embedder: Arc<dyn Embedder>,
        templates: Arc<TemplateSet>,
        params: PipelineParams,
    ) -> Result<Self, PipelineError> {
        params.validate()?;
        if embedder.dim() != ttr.dim() {
            return Err(PipelineError::DimensionMismatch {
                expected: ttr.dim(),
                got: embedder.dim(),
            });
        }
        Ok(Self {
            kg,
            ttr,
            chat,
            embedder,
            templates,
            params,
        })
    }

    pub fn kg(&self) -> &KnowledgeGraph {
        &self.kg
    }

    pub fn ttr(&self) -> &TtrVectors {
        &self.ttr
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn chat(&self) -> &dyn ChatModel {
        self.chat.as_ref()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn with_params(&self, params: PipelineParams) -> Result<Self, PipelineError> {
        params.validate()?;
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn contextualize(&self, query: &str) -> Result<ContextResult, PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let p = &self.params;
        let mut trace = Trace::default();

        let t = Instant::now();
        let query_vector = self
            .embedder
            .embed_one(query)
            .map_err(|e| PipelineError::from(e).at(Stage::Extract))?;
        let extracted = extract_subgraph(&query_vector, &self.kg, &self.ttr, p.k_extract)
            .map_err(|e| e.at(Stage::Extract))?;
        trace.record(Stage::Extract, t, self.kg.len(), extracted.len());

        let t = Instant::now();
        let filtered = if p.filter_enabled {
            let (sg, stats) = filter_subgraph(query, &extracted, self.chat.as_ref(), &self.templates.filter)
                .map_err(|e| e.at(Stage::Filter))?;
            trace.filter = stats;
            sg
        } else {
            extracted.clone()
        };
        trace.record(Stage::Filter, t, extracted.len(), filtered.len());

        let t = Instant::now();
        let (completed, stats) = complete_subgraph(&self.kg, &filtered, Some(&query_vector), &self.ttr, p);
        trace.completion = stats;
        trace.record(Stage::Complete, t, filtered.len(), completed.len());

        let t = Instant::now();
        let context_text = generate_context(&completed, query, self.chat.as_ref(), &self.templates.generate)
            .map_err(|e| e.at(Stage::Generate))?;
        trace.record(Stage::Generate, t, completed.len(), completed.len());

        let t = Instant::now();
        let (context_vector, fused_vector) = if context_text.is_empty() {
            (None, query_vector.to_f64())
        } else {
            let ctx = self
                .embedder
                .embed_one(&context_text)
                .map_err(|e| PipelineError::from(e).at(Stage::Fuse))?;
            let fused = fuse(&query_vector, &ctx, p.alpha).map_err(|e| e.at(Stage::Fuse))?;
            (Some(ctx), fused)
        };
        trace.record(Stage::Fuse, t, completed.len(), completed.len());

        Ok(ContextResult {
            query: query.to_string(),
            context_text,
            subgraph: completed,
            query_vector,
            context_vector,
            fused_vector,
            trace,
        })
    }
}
