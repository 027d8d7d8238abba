use std::collections::HashSet;

use serde::Serialize;

use crate::kg::{BareTriple, Triplet};

/// A triplet with the relevance score it was selected with. Triplets added
/// by completion carry no score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTriplet {
    #[serde(flatten)]
    pub triplet: Triplet,
    pub score: Option<f64>,
}

/// An ordered selection of graph triplets.
///
/// Scored entries come first, sorted by descending score; unscored entries
/// (from completion) follow in the order they were added.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Subgraph {
    items: Vec<ScoredTriplet>,
}

impl Subgraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items(items: Vec<ScoredTriplet>) -> Self {
        Self { items }
    }

    pub fn push(&mut self, triplet: Triplet, score: Option<f64>) {
        self.items.push(ScoredTriplet { triplet, score });
    }

    pub fn items(&self) -> &[ScoredTriplet] {
        &self.items
    }

    pub fn into_items(self) -> Vec<ScoredTriplet> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.items.iter().map(|i| &i.triplet)
    }

    pub fn bare_triples(&self) -> Vec<BareTriple> {
        self.triplets().map(Triplet::bare).collect()
    }

    pub fn bare_set(&self) -> HashSet<BareTriple> {
        self.triplets().map(Triplet::bare).collect()
    }

    /// Heads and tails in order of first appearance.
    pub fn entities(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in self.triplets() {
            for e in [&t.head, &t.tail] {
                if seen.insert(e.as_str()) {
                    out.push(e.clone());
                }
            }
        }
        out
    }

    /// True when the scored entries form a descending prefix.
    pub fn is_score_ordered(&self) -> bool {
        let scores: Vec<f64> = self.items.iter().map_while(|i| i.score).collect();
        scores.windows(2).all(|w| w[0] >= w[1])
            && self.items[scores.len()..].iter().all(|i| i.score.is_none())
    }
}

/// `head | relation | tail | ttr`, the line format fed to filter and
/// generation prompts.
pub fn triplet_line(t: &Triplet) -> String {
    format!("{} | {} | {} | {}", t.head, t.relation, t.tail, t.ttr)
}
