//! Average precision and recall at cutoffs, binary relevance.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use super::{RankedResult, RetrievalError};

/// Cutoffs reported by default.
pub const RECALL_CUTOFFS: [usize; 3] = [5, 10, 25];

fn check_relevant(relevant: &BTreeSet<String>) -> Result<(), RetrievalError> {
    if relevant.is_empty() {
        return Err(RetrievalError::Validation("relevant set is empty".into()));
    }
    Ok(())
}

/// Mean, over relevant documents, of the precision at the rank where each
/// is found. Relevant documents missing from the ranking contribute zero.
pub fn average_precision(ranking: &[String], relevant: &BTreeSet<String>) -> Result<f64, RetrievalError> {
    check_relevant(relevant)?;
    let mut seen = HashSet::new();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.iter().enumerate() {
        if relevant.contains(doc) && seen.insert(doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Fraction of the relevant documents found in the first `k` positions.
pub fn recall_at_k(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> Result<f64, RetrievalError> {
    check_relevant(relevant)?;
    let found: HashSet<&String> = ranking.iter().take(k).filter(|d| relevant.contains(*d)).collect();
    Ok(found.len() as f64 / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ap: f64,
    pub recall_at: BTreeMap<usize, f64>,
}

impl QueryMetrics {
    pub fn compute(
        result: &RankedResult,
        relevant: &BTreeSet<String>,
        cutoffs: &[usize],
    ) -> Result<Self, RetrievalError> {
        let ranking = result.doc_ids();
        let mut recall_at = BTreeMap::new();
        for &k in cutoffs {
            recall_at.insert(k, recall_at_k(&ranking, relevant, k)?);
        }
        Ok(Self {
            query_id: result.query_id.clone(),
            ap: average_precision(&ranking, relevant)?,
            recall_at,
        })
    }
}

impl Serialize for QueryMetrics {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2 + self.recall_at.len()))?;
        m.serialize_entry("query_id", &self.query_id)?;
        m.serialize_entry("ap", &self.ap)?;
        for (k, v) in &self.recall_at {
            m.serialize_entry(&format!("recall@{k}"), v)?;
        }
        m.end()
    }
}

/// Aggregate metrics over a query set. Serializes as
/// `{"map", "recall@5", ..., "n_queries"}` plus `per_query` when kept.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub map: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub per_query: Option<Vec<QueryMetrics>>,
}

impl MetricsReport {
    /// Unweighted means over `queries`, which must be non-empty.
    pub fn aggregate(queries: Vec<QueryMetrics>, keep_per_query: bool) -> Result<Self, RetrievalError> {
        if queries.is_empty() {
            return Err(RetrievalError::Validation("no queries to evaluate".into()));
        }
        let n = queries.len() as f64;
        let map = queries.iter().map(|q| q.ap).sum::<f64>() / n;
        let mut recall_at = BTreeMap::new();
        for &k in queries[0].recall_at.keys() {
            let total: f64 = queries.iter().map(|q| q.recall_at[&k]).sum();
            recall_at.insert(k, total / n);
        }
        Ok(Self {
            map,
            recall_at,
            n_queries: queries.len(),
            per_query: keep_per_query.then_some(queries),
        })
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("map", &self.map)?;
        for (k, v) in &self.recall_at {
            m.serialize_entry(&format!("recall@{k}"), v)?;
        }
        m.serialize_entry("n_queries", &self.n_queries)?;
        if let Some(per_query) = &self.per_query {
            m.serialize_entry("per_query", per_query)?;
        }
        m.end()
    }
}
