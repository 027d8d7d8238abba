//! Corpus documents and evaluation records.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            meta: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.doc_id.trim().is_empty() {
            return Err("doc_id is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("document {} has empty text", self.doc_id));
        }
        Ok(())
    }
}

/// Loads `corpus.jsonl`, rejecting empty texts and repeated ids.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, JsonlError> {
    let mut seen = HashSet::new();
    read_jsonl(path.as_ref(), |d: &Document| {
        d.validate()?;
        if !seen.insert(d.doc_id.clone()) {
            return Err(format!("duplicate doc_id {}", d.doc_id));
        }
        Ok(())
    })
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> std::io::Result<()> {
    write_jsonl(path.as_ref(), docs)
}

/// One evaluation query with its binary relevance judgments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub query: String,
    pub relevant_doc_ids: BTreeSet<String>,
}

pub fn load_eval(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, JsonlError> {
    read_jsonl(path.as_ref(), |r: &EvalRecord| {
        if r.relevant_doc_ids.is_empty() {
            Err(format!("query {} has no relevant documents", r.query_id))
        } else {
            Ok(())
        }
    })
}

/// A query without judgments; `eval.jsonl` files also parse as this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub query: String,
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>, JsonlError> {
    read_jsonl(path.as_ref(), |_: &QueryRecord| Ok(()))
}
