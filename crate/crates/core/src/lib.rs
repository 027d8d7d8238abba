//! Knowledge-graph contextual query retrieval.
//!
//! The crate builds a knowledge graph over a document corpus, where every
//! triplet carries a natural-language description, and uses it to enrich
//! queries before dense retrieval:
//!
//! 1. rank triplets by similarity between their descriptions and the query,
//! 2. optionally drop the ones an LLM judges irrelevant,
//! 3. add triplets lying on high-scoring paths between the surviving
//!    entities (beam-limited breadth-first search),
//! 4. have an LLM write a context passage from the resulting subgraph,
//! 5. search with a weighted sum of the query and context embeddings.
//!
//! Providers are pluggable; [`providers::MockChat`] and
//! [`providers::MockEmbedder`] make everything reproducible offline.

pub mod construction;
pub mod corpus;
pub mod index;
pub mod jsonl;
pub mod kg;
pub mod pipeline;
pub mod providers;
pub mod retrieval;
pub mod template;
pub mod text;

pub use corpus::{Document, EvalRecord, QueryRecord};
pub use index::VectorIndex;
pub use kg::{BareTriple, Entity, KnowledgeGraph, Path, Triplet};
pub use pipeline::{ContextResult, CqrPipeline, PipelineParams, Subgraph};
pub use providers::{ChatModel, Embedder, EmbeddingVector};
