//! Breadth-first path search with a per-expansion beam.
//!
//! Starting from the source entity, states `(node, path)` are taken from a
//! FIFO queue. A state whose path is longer than the limit is dropped; a
//! non-empty path that reached the target is emitted and not extended.
//! Otherwise the node is expanded: every outgoing triplet whose tail is not
//! already on the path (the source counts as on the path) is scored, the
//! candidates are sorted by score descending with ties broken by
//! `(head, relation, tail)`, and only the best `width` of them are queued.
//! With `width = usize::MAX` this is plain BFS over simple paths.

use std::collections::VecDeque;

use serde::Serialize;

use crate::kg::{KnowledgeGraph, Path};

/// Work counters for one or more traversals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TraversalStats {
    /// States whose outgoing edges were scanned.
    pub expansions: u64,
    /// States pushed onto the queue.
    pub enqueued: u64,
}

impl std::ops::AddAssign for TraversalStats {
    fn add_assign(&mut self, rhs: Self) {
        self.expansions += rhs.expansions;
        self.enqueued += rhs.enqueued;
    }
}

/// Beam width that disables pruning.
pub const UNBOUNDED: usize = usize::MAX;

/// Finds directed paths of at most `max_len` edges from `source` to `target`.
///
/// `edge_score` maps a triplet position to its relevance (the similarity of
/// its TTR embedding with the query, or 0 without a query). Unknown entities
/// yield no paths.
pub fn bfs_beam(
    kg: &KnowledgeGraph,
    source: &str,
    target: &str,
    max_len: usize,
    width: usize,
    edge_score: &dyn Fn(usize) -> f64,
    stats: &mut TraversalStats,
) -> Vec<Path> {
    let mut found = Vec::new();
    if !kg.contains_entity(source) {
        return found;
    }
    let mut queue: VecDeque<(&str, Vec<usize>)> = VecDeque::new();
    queue.push_back((source, Vec::new()));
    stats.enqueued += 1;
    let mut candidates: Vec<(f64, usize)> = Vec::new();

    while let Some((node, path)) = queue.pop_front() {
        if path.len() > max_len {
            continue;
        }
        if node == target {
            if !path.is_empty() {
                found.push(Path::from_edges_unchecked(path));
            }
            continue;
        }
        stats.expansions += 1;

        candidates.clear();
        for &e in kg.out_edges(node) {
            let tail = kg.triplet(e).tail.as_str();
            let on_path = tail == source || path.iter().any(|&p| kg.triplet(p).tail == tail);
            if !on_path {
                candidates.push((edge_score(e), e));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0).then_with(|| {
                let (x, y) = (kg.triplet(a.1), kg.triplet(b.1));
                (&x.head, &x.relation, &x.tail).cmp(&(&y.head, &y.relation, &y.tail))
            })
        });
        for &(_, e) in candidates.iter().take(width) {
            let mut next = path.clone();
            next.push(e);
            queue.push_back((kg.triplet(e).tail.as_str(), next));
            stats.enqueued += 1;
        }
    }
    found
}
