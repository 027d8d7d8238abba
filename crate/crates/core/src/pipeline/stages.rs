//! The individual stages of query contextualization.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use super::beam::{bfs_beam, TraversalStats};
use super::subgraph::{triplet_line, ScoredTriplet, Subgraph};
use super::{PipelineError, PipelineParams};
use crate::index::VectorIndex;
use crate::kg::{BareTriple, KnowledgeGraph, Path};
use crate::providers::{ChatModel, EmbeddingVector};
use crate::template::{PromptTemplate, TemplateId};

/// TTR embeddings aligned with the triplets of a graph.
///
/// Construction checks that the index holds exactly one vector per triplet,
/// keyed by [`BareTriple::key`].
#[derive(Debug, Clone)]
pub struct TtrVectors {
    index: VectorIndex,
    row_of: Vec<usize>,
    triplet_of: Vec<usize>,
}

impl TtrVectors {
    pub fn new(kg: &KnowledgeGraph, index: VectorIndex) -> Result<Self, PipelineError> {
        if index.len() != kg.len() {
            return Err(PipelineError::Integrity(format!(
                "index has {} entries for {} triplets",
                index.len(),
                kg.len()
            )));
        }
        let mut row_of = Vec::with_capacity(kg.len());
        let mut triplet_of = vec![0; kg.len()];
        for (pos, t) in kg.triplets().iter().enumerate() {
            let row = index
                .position(&t.key())
                .ok_or_else(|| PipelineError::Integrity(format!("no vector for triplet {}", t.bare())))?;
            row_of.push(row);
            triplet_of[row] = pos;
        }
        Ok(Self {
            index,
            row_of,
            triplet_of,
        })
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    /// Cosine similarity between the TTR of triplet `pos` and the query,
    /// or 0 without a query.
    pub fn edge_score(&self, pos: usize, query: Option<&EmbeddingVector>) -> f64 {
        match query {
            Some(q) => self.index.similarity(self.row_of[pos], q),
            None => 0.0,
        }
    }

    fn triplet_at_row(&self, row: usize) -> usize {
        self.triplet_of[row]
    }
}

/// The `k` triplets whose TTR embeddings are most similar to the query,
/// best first. Ties are broken by triplet key.
pub fn extract_subgraph(
    query: &EmbeddingVector,
    kg: &KnowledgeGraph,
    ttr: &TtrVectors,
    k: usize,
) -> Result<Subgraph, PipelineError> {
    if k == 0 || kg.is_empty() {
        return Ok(Subgraph::new());
    }
    if query.dim() != ttr.dim() {
        return Err(PipelineError::DimensionMismatch {
            expected: ttr.dim(),
            got: query.dim(),
        });
    }
    let hits = ttr.index().search_embedding(query, k)?;
    let mut sg = Subgraph::new();
    for hit in hits {
        let row = ttr.index().position(&hit.key).expect("hit key is indexed");
        sg.push(kg.triplet(ttr.triplet_at_row(row)).clone(), Some(hit.score));
    }
    Ok(sg)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterStats {
    pub judged: usize,
    pub rejected: usize,
    /// Judgments that failed; those triplets are kept.
    pub provider_errors: usize,
}

/// Judgment parsing: trimmed, case-folded, affirmative iff it starts with
/// "true" or "yes".
pub fn is_affirmative(response: &str) -> bool {
    let r = response.trim().to_lowercase();
    r.starts_with("true") || r.starts_with("yes")
}

/// Keeps the triplets the LLM judges relevant to `query`, in their original
/// order. A triplet whose judgment call fails is kept.
pub fn filter_subgraph(
    query: &str,
    sg: &Subgraph,
    chat: &dyn ChatModel,
    template: &PromptTemplate,
) -> Result<(Subgraph, FilterStats), PipelineError> {
    template.expect_id(TemplateId::Filter)?;
    let requests = sg
        .triplets()
        .map(|t| template.request(&[("query", query), ("triplet", &triplet_line(t))]))
        .collect::<Result<Vec<_>, _>>()?;
    let verdicts: Vec<Result<bool, String>> = requests
        .par_iter()
        .map(|req| chat.chat(req).map(|r| is_affirmative(&r)).map_err(|e| e.to_string()))
        .collect();

    let mut stats = FilterStats {
        judged: sg.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for (item, verdict) in sg.items().iter().zip(verdicts) {
        let keep = match verdict {
            Ok(v) => v,
            Err(e) => {
                log::warn!("filter judgment failed for {}: {e}; keeping", item.triplet.bare());
                stats.provider_errors += 1;
                true
            }
        };
        if keep {
            kept.push(item.clone());
        } else {
            stats.rejected += 1;
        }
    }
    Ok((Subgraph::from_items(kept), stats))
}

/// A path with the mean similarity of its edges to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub path: Path,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CompletionStats {
    pub entity_pairs: usize,
    pub paths: usize,
    pub added: usize,
    #[serde(flatten)]
    pub traversal: TraversalStats,
}

/// Every distinct path found between ordered pairs of distinct entities of
/// `initial`, ranked by mean edge score (stable for equal scores).
pub fn connecting_paths(
    kg: &KnowledgeGraph,
    initial: &Subgraph,
    query: Option<&EmbeddingVector>,
    ttr: &TtrVectors,
    max_len: usize,
    width: usize,
) -> (Vec<ScoredPath>, CompletionStats) {
    let entities = initial.entities();
    let pairs: Vec<(&str, &str)> = entities
        .iter()
        .flat_map(|a| {
            entities
                .iter()
                .filter(move |b| *b != a)
                .map(move |b| (a.as_str(), b.as_str()))
        })
        .collect();
    let score = |pos: usize| ttr.edge_score(pos, query);
    let per_pair: Vec<(Vec<Path>, TraversalStats)> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let mut stats = TraversalStats::default();
            let paths = bfs_beam(kg, s, t, max_len, width, &score, &mut stats);
            (paths, stats)
        })
        .collect();

    let mut stats = CompletionStats {
        entity_pairs: pairs.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut scored = Vec::new();
    for (paths, s) in per_pair {
        stats.traversal += s;
        for path in paths {
            if !seen.insert(path.edges().to_vec()) {
                continue;
            }
            let total: f64 = path.edges().iter().map(|&e| score(e)).sum();
            let mean = total / path.len() as f64;
            scored.push(ScoredPath { path, score: mean });
        }
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    stats.paths = scored.len();
    (scored, stats)
}

/// Adds up to `params.k_complete` triplets lying on the best-scoring paths
/// between entities of `initial`. The initial triplets come first, added
/// ones after, unscored.
pub fn complete_subgraph(
    kg: &KnowledgeGraph,
    initial: &Subgraph,
    query: Option<&EmbeddingVector>,
    ttr: &TtrVectors,
    params: &PipelineParams,
) -> (Subgraph, CompletionStats) {
    let (paths, mut stats) = connecting_paths(
        kg,
        initial,
        query,
        ttr,
        params.max_path_len,
        params.beam_width,
    );
    if paths.is_empty() {
        return (initial.clone(), stats);
    }
    let existing = initial.bare_set();
    let mut added: Vec<usize> = Vec::new();
    let mut added_set: HashSet<BareTriple> = HashSet::new();
    'harvest: for sp in &paths {
        for &e in sp.path.edges() {
            if added.len() >= params.k_complete {
                break 'harvest;
            }
            let bare = kg.triplet(e).bare();
            if !existing.contains(&bare) && added_set.insert(bare) {
                added.push(e);
            }
        }
    }
    stats.added = added.len();
    let mut items: Vec<ScoredTriplet> = initial.items().to_vec();
    items.extend(added.into_iter().map(|e| ScoredTriplet {
        triplet: kg.triplet(e).clone(),
        score: None,
    }));
    (Subgraph::from_items(items), stats)
}

/// Asks the LLM for a context passage describing `sg`. An empty subgraph
/// yields an empty context without calling the provider.
pub fn generate_context(
    sg: &Subgraph,
    query: &str,
    chat: &dyn ChatModel,
    template: &PromptTemplate,
) -> Result<String, PipelineError> {
    template.expect_id(TemplateId::Generate)?;
    if sg.is_empty() {
        return Ok(String::new());
    }
    let block = sg.triplets().map(triplet_line).collect::<Vec<_>>().join("\n");
    let req = template.request(&[("triplets", &block), ("query", query)])?;
    let text = chat.chat(&req)?;
    let text = text.trim();
    if text.is_empty() {
        return Err(PipelineError::EmptyContext);
    }
    Ok(text.to_string())
}

/// `alpha * query + (1 - alpha) * context`, component-wise and not
/// renormalized.
pub fn fuse(query: &EmbeddingVector, context: &EmbeddingVector, alpha: f64) -> Result<Vec<f64>, PipelineError> {
    if query.dim() != context.dim() {
        return Err(PipelineError::DimensionMismatch {
            expected: query.dim(),
            got: context.dim(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PipelineError::InvalidParams(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(query
        .values()
        .iter()
        .zip(context.values())
        .map(|(&q, &c)| alpha * f64::from(q) + (1.0 - alpha) * f64::from(c))
        .collect())
}
