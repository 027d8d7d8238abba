//! Knowledge graph store.
//!
//! A graph is a deduplicated list of [`Triplet`]s plus the entity and relation
//! sets they mention and an adjacency index keyed by head entity. Edges are
//! directed: traversal only follows `head -> tail`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("invalid triplet: {0}")]
    Validation(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Canonical form of an entity or relation string: trimmed, with every run of
/// internal whitespace collapsed to a single space. Case is preserved.
pub fn canonicalize(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A graph node. Two entities are equal iff their canonical ids are equal.
#[derive(Debug, Clone, Eq)]
pub struct Entity {
    pub id: String,
    pub label: String,
}

impl Entity {
    pub fn new(raw: &str) -> Result<Self, KgError> {
        let id = canonicalize(raw);
        if id.is_empty() {
            return Err(KgError::Validation("entity id is empty".into()));
        }
        Ok(Self {
            id,
            label: raw.trim().to_string(),
        })
    }
}

impl PartialEq for Entity {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl std::hash::Hash for Entity {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.id.hash(state)
    }
}

/// The identity of a triplet, ignoring its textual representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BareTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl BareTriple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: canonicalize(head),
            relation: canonicalize(relation),
            tail: canonicalize(tail),
        }
    }

    /// Stable string key used to address a triplet in vector indices.
    ///
    /// Canonical strings never contain a tab, so the key is unambiguous.
    pub fn key(&self) -> String {
        triple_key(&self.head, &self.relation, &self.tail)
    }
}

impl fmt::Display for BareTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | {}", self.head, self.relation, self.tail)
    }
}

pub fn triple_key(head: &str, relation: &str, tail: &str) -> String {
    format!("{head}\t{relation}\t{tail}")
}

/// A structured relation together with its textual representation (TTR) and
/// the id of the document it was extracted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    #[serde(default)]
    pub ttr: String,
    #[serde(default)]
    pub source_doc_id: String,
}

impl Triplet {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
            ttr: String::new(),
            source_doc_id: String::new(),
        }
    }

    pub fn with_ttr(mut self, ttr: impl Into<String>) -> Self {
        self.ttr = ttr.into();
        self
    }

    pub fn with_source(mut self, doc_id: impl Into<String>) -> Self {
        self.source_doc_id = doc_id.into();
        self
    }

    pub fn bare(&self) -> BareTriple {
        BareTriple::new(&self.head, &self.relation, &self.tail)
    }

    pub fn key(&self) -> String {
        triple_key(&self.head, &self.relation, &self.tail)
    }

    /// Validates the non-empty field rules and returns the canonicalized form.
    pub fn canonical(&self) -> Result<Self, KgError> {
        let bare = self.bare();
        if bare.head.is_empty() {
            return Err(KgError::Validation("head is empty".into()));
        }
        if bare.relation.is_empty() {
            return Err(KgError::Validation("relation is empty".into()));
        }
        if bare.tail.is_empty() {
            return Err(KgError::Validation("tail is empty".into()));
        }
        Ok(Self {
            head: bare.head,
            relation: bare.relation,
            tail: bare.tail,
            ttr: self.ttr.clone(),
            source_doc_id: self.source_doc_id.clone(),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: BTreeMap<String, Entity>,
    relations: BTreeSet<String>,
    triplets: Vec<Triplet>,
    out_index: HashMap<String, Vec<usize>>,
    by_bare: HashMap<BareTriple, usize>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.triplets == other.triplets
            && self.relations == other.relations
            && self.entities.keys().eq(other.entities.keys())
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triplets<I: IntoIterator<Item = Triplet>>(triplets: I) -> Result<Self, KgError> {
        let mut kg = Self::new();
        for t in triplets {
            kg.insert(t)?;
        }
        Ok(kg)
    }

    /// Inserts a triplet, merging with an existing one of the same bare
    /// identity. On merge the stored TTR is kept unless it is empty.
    ///
    /// Returns the position of the triplet in [`Self::triplets`].
    pub fn insert(&mut self, t: Triplet) -> Result<usize, KgError> {
        let t = t.canonical()?;
        let bare = t.bare();
        if let Some(&pos) = self.by_bare.get(&bare) {
            let existing = &mut self.triplets[pos];
            if existing.ttr.is_empty() && !t.ttr.is_empty() {
                existing.ttr = t.ttr;
            }
            if existing.source_doc_id.is_empty() {
                existing.source_doc_id = t.source_doc_id;
            }
            return Ok(pos);
        }
        let pos = self.triplets.len();
        for id in [&t.head, &t.tail] {
            self.entities
                .entry(id.clone())
                .or_insert_with(|| Entity {
                    id: id.clone(),
                    label: id.clone(),
                });
        }
        self.relations.insert(t.relation.clone());
        self.out_index.entry(t.head.clone()).or_default().push(pos);
        self.by_bare.insert(bare, pos);
        self.triplets.push(t);
        Ok(pos)
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn triplet(&self, pos: usize) -> &Triplet {
        &self.triplets[pos]
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn contains_entity(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    pub fn position(&self, bare: &BareTriple) -> Option<usize> {
        self.by_bare.get(bare).copied()
    }

    pub fn contains(&self, bare: &BareTriple) -> bool {
        self.by_bare.contains_key(bare)
    }

    /// Positions of the outgoing triplets of `head`, in insertion order.
    pub fn out_edges(&self, head: &str) -> &[usize] {
        self.out_index.get(head).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Outgoing triplets of `head`, in insertion order. Unknown heads yield
    /// an empty list.
    pub fn neighbors(&self, head: &str) -> Vec<&Triplet> {
        self.out_edges(head)
            .iter()
            .map(|&i| &self.triplets[i])
            .collect()
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_index.values().map(Vec::len).max().unwrap_or(0)
    }

    /// Replaces the TTR of the triplet at `pos`.
    pub fn set_ttr(&mut self, pos: usize, ttr: String) {
        self.triplets[pos].ttr = ttr;
    }

    /// Checks the structural invariants. Used by tests and after loading.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (i, t) in self.triplets.iter().enumerate() {
            if !self.entities.contains_key(&t.head) || !self.entities.contains_key(&t.tail) {
                return Err(format!("triplet {i} mentions an unknown entity"));
            }
            if !self.relations.contains(&t.relation) {
                return Err(format!("triplet {i} has an unknown relation"));
            }
            if !seen.insert(t.bare()) {
                return Err(format!("triplet {i} duplicates an earlier bare triple"));
            }
            if !self.out_edges(&t.head).contains(&i) {
                return Err(format!("triplet {i} missing from out_index"));
            }
        }
        let indexed: usize = self.out_index.values().map(Vec::len).sum();
        if indexed != self.triplets.len() {
            return Err(format!(
                "out_index covers {indexed} entries for {} triplets",
                self.triplets.len()
            ));
        }
        Ok(())
    }

    /// Writes the graph as JSON lines, one triplet per line.
    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<(), KgError> {
        crate::jsonl::write_jsonl(path.as_ref(), &self.triplets).map_err(|source| KgError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self, KgError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let io = |source| KgError::Io {
            path: display.clone(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut kg = Self::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| KgError::Parse {
                path: display.clone(),
                line: n + 1,
                message,
            };
            let t: Triplet = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            kg.insert(t).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(kg)
    }

    /// Serializes the graph to the same bytes [`Self::save`] writes.
    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        {
            let mut w = BufWriter::new(&mut out);
            for t in &self.triplets {
                serde_json::to_writer(&mut w, t).expect("triplet serializes");
                w.write_all(b"\n").expect("write to memory");
            }
        }
        String::from_utf8(out).expect("json is utf-8")
    }
}

/// A directed path through the graph, stored as triplet positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    edges: Vec<usize>,
}

impl Path {
    /// Builds a path after checking the chain and acyclicity rules against `kg`.
    pub fn new(kg: &KnowledgeGraph, edges: Vec<usize>) -> Result<Self, KgError> {
        let path = Self { edges };
        path.validate(kg)?;
        Ok(path)
    }

    pub(crate) fn from_edges_unchecked(edges: Vec<usize>) -> Self {
        Self { edges }
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn triplets<'a>(&'a self, kg: &'a KnowledgeGraph) -> impl Iterator<Item = &'a Triplet> + 'a {
        self.edges.iter().map(move |&i| kg.triplet(i))
    }

    pub fn source<'a>(&self, kg: &'a KnowledgeGraph) -> &'a str {
        &kg.triplet(self.edges[0]).head
    }

    pub fn target<'a>(&self, kg: &'a KnowledgeGraph) -> &'a str {
        &kg.triplet(*self.edges.last().expect("non-empty path")).tail
    }

    pub fn validate(&self, kg: &KnowledgeGraph) -> Result<(), KgError> {
        let Some(&first) = self.edges.first() else {
            return Err(KgError::Validation("path has no edges".into()));
        };
        if self.edges.iter().any(|&i| i >= kg.len()) {
            return Err(KgError::Validation("path edge outside the graph".into()));
        }
        let mut visited = BTreeSet::new();
        visited.insert(kg.triplet(first).head.as_str());
        let mut prev_tail: Option<&str> = None;
        for t in self.triplets(kg) {
            if let Some(prev) = prev_tail {
                if prev != t.head {
                    return Err(KgError::Validation(format!(
                        "chain broken: {prev} then {}",
                        t.head
                    )));
                }
            }
            if !visited.insert(t.tail.as_str()) {
                return Err(KgError::Validation(format!("entity {} revisited", t.tail)));
            }
            prev_tail = Some(&t.tail);
        }
        Ok(())
    }
}
