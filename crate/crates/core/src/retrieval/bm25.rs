//! Okapi BM25 ranking.

use std::collections::HashMap;

use crate::corpus::Document;
use crate::index::rank_order;
use crate::text::tokenize;

use super::{RankedResult, RetrievalError, ScoredDoc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// An in-memory inverted index.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_len: Vec<usize>,
    avg_len: f64,
    postings: HashMap<String, Vec<(usize, u32)>>,
}

impl Bm25Index {
    pub fn build(corpus: &[Document]) -> Result<Self, RetrievalError> {
        Self::with_params(corpus, Bm25Params::default())
    }

    pub fn with_params(corpus: &[Document], params: Bm25Params) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::Validation("BM25 needs a non-empty corpus".into()));
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        for (i, doc) in corpus.iter().enumerate() {
            let tokens = tokenize(&doc.text);
            doc_len.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
        }
        let avg_len = doc_len.iter().sum::<usize>() as f64 / corpus.len() as f64;
        Ok(Self {
            params,
            doc_ids: corpus.iter().map(|d| d.doc_id.clone()).collect(),
            doc_len,
            avg_len,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Number of documents containing `term` (already lowercased).
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// Score of every document, in corpus order. Each query token
    /// occurrence contributes once.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0; self.len()];
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * self.doc_len[doc] as f64 / self.avg_len;
                scores[doc] += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        scores
    }

    /// The `top_n` documents with a positive score, best first, ties broken
    /// by `doc_id`.
    pub fn search(&self, query_id: &str, query: &str, top_n: usize) -> Result<RankedResult, RetrievalError> {
        if top_n == 0 {
            return Err(RetrievalError::Validation("top_n must be positive".into()));
        }
        let mut hits: Vec<(f64, usize)> = self
            .scores(query)
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s > 0.0)
            .map(|(i, s)| (s, i))
            .collect();
        hits.sort_by(|a, b| rank_order(a.0, &self.doc_ids[a.1], b.0, &self.doc_ids[b.1]));
        hits.truncate(top_n);
        Ok(RankedResult {
            query_id: query_id.to_string(),
            ranking: hits
                .into_iter()
                .map(|(score, i)| ScoredDoc {
                    doc_id: self.doc_ids[i].clone(),
                    score,
                })
                .collect(),
        })
    }
}
