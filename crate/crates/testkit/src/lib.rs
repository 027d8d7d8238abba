//! Reference implementations and random instance generators shared by the
//! test suites. The oracles here deliberately avoid the library's own
//! traversal, ranking and metric code.

use std::collections::{BTreeSet, HashSet};

use kgcqr::providers::EmbeddingVector;
use kgcqr::{KnowledgeGraph, Triplet, VectorIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every simple directed path of 1..=`max_len` edges from `source` to
/// `target`, as lists of triplet positions. Found by depth-first search
/// over a linear scan of the triplet list.
pub fn exhaustive_paths(kg: &KnowledgeGraph, source: &str, target: &str, max_len: usize) -> BTreeSet<Vec<usize>> {
    fn dfs(
        kg: &KnowledgeGraph,
        node: &str,
        target: &str,
        max_len: usize,
        visited: &mut Vec<String>,
        path: &mut Vec<usize>,
        out: &mut BTreeSet<Vec<usize>>,
    ) {
        if node == target && !path.is_empty() {
            out.insert(path.clone());
            return;
        }
        if path.len() == max_len {
            return;
        }
        for (pos, t) in kg.triplets().iter().enumerate() {
            if t.head != node || visited.contains(&t.tail) {
                continue;
            }
            visited.push(t.tail.clone());
            path.push(pos);
            dfs(kg, &t.tail, target, max_len, visited, path, out);
            path.pop();
            visited.pop();
        }
    }
    let mut out = BTreeSet::new();
    let mut visited = vec![source.to_string()];
    dfs(kg, source, target, max_len, &mut visited, &mut Vec::new(), &mut out);
    out
}

/// Triplet positions lying on any simple path of at most `max_len` edges
/// between two distinct members of `entities`.
pub fn triplets_on_connecting_paths(kg: &KnowledgeGraph, entities: &[String], max_len: usize) -> HashSet<usize> {
    let mut on = HashSet::new();
    for a in entities {
        for b in entities {
            if a != b {
                for p in exhaustive_paths(kg, a, b, max_len) {
                    on.extend(p);
                }
            }
        }
    }
    on
}

/// Inner product accumulated left to right in double precision.
pub fn dot(stored: &[f32], query: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..stored.len() {
        s += f64::from(stored[i]) * f64::from(query[i]);
    }
    s
}

/// All `(key, score)` pairs of `index` against `query`, fully sorted by
/// score descending then key ascending, cut to `k`.
pub fn brute_force_top_k(index: &VectorIndex, query: &EmbeddingVector, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = index
        .keys()
        .iter()
        .enumerate()
        .map(|(i, key)| (key.clone(), dot(index.vector_at(i), query.values())))
        .collect();
    all.sort_by(|a, b| {
        if a.1 > b.1 {
            std::cmp::Ordering::Less
        } else if a.1 < b.1 {
            std::cmp::Ordering::Greater
        } else {
            a.0.cmp(&b.0)
        }
    });
    all.truncate(k);
    all
}

/// Average precision written straight from the definition: for each
/// relevant document, precision of the prefix ending at its first
/// occurrence (0 when absent), averaged over the relevant set.
pub fn reference_ap(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    let mut total = 0.0;
    for r in relevant {
        if let Some(idx) = ranking.iter().position(|d| d == r) {
            let prefix = &ranking[..=idx];
            let distinct: BTreeSet<&String> = prefix.iter().filter(|d| relevant.contains(*d)).collect();
            total += distinct.len() as f64 / (idx + 1) as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn reference_recall(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let cut = &ranking[..k.min(ranking.len())];
    relevant.iter().filter(|r| cut.contains(r)).count() as f64 / relevant.len() as f64
}

fn entity(i: usize) -> String {
    format!("e{i}")
}

fn edge(h: usize, r: usize, t: usize) -> Triplet {
    let (h, t) = (entity(h), entity(t));
    let rel = format!("r{r}");
    let ttr = format!("{h} {rel} {t}");
    Triplet::new(&h, &rel, &t).with_ttr(ttr).with_source("synthetic")
}

/// A random directed multigraph: every node gets between 0 and
/// `max_out_degree` outgoing edges to random other nodes, with relations
/// drawn from `relations` labels.
pub fn random_graph(rng: &mut TestRng, nodes: usize, max_out_degree: usize, relations: usize) -> KnowledgeGraph {
    let mut triplets = Vec::new();
    for h in 0..nodes {
        let degree = rng.gen_range(0..=max_out_degree);
        for _ in 0..degree {
            let mut t = rng.gen_range(0..nodes);
            if t == h {
                t = (t + 1) % nodes;
            }
            triplets.push(edge(h, rng.gen_range(0..relations), t));
        }
    }
    if triplets.is_empty() {
        triplets.push(edge(0, 0, 1 % nodes.max(2)));
    }
    KnowledgeGraph::from_triplets(triplets).expect("generated triplets are valid")
}

/// Every node has exactly `out_degree` outgoing edges to distinct other
/// nodes.
pub fn regular_graph(rng: &mut TestRng, nodes: usize, out_degree: usize) -> KnowledgeGraph {
    assert!(out_degree < nodes);
    let mut triplets = Vec::with_capacity(nodes * out_degree);
    let all: Vec<usize> = (0..nodes).collect();
    for h in 0..nodes {
        let tails: Vec<usize> = all
            .choose_multiple(rng, out_degree + 1)
            .copied()
            .filter(|&t| t != h)
            .take(out_degree)
            .collect();
        for t in tails {
            triplets.push(edge(h, 0, t));
        }
    }
    KnowledgeGraph::from_triplets(triplets).expect("generated triplets are valid")
}

/// A uniformly random direction.
pub fn random_unit(rng: &mut TestRng, dim: usize) -> EmbeddingVector {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Ok(v) = EmbeddingVector::from_f64(&raw) {
            return v;
        }
    }
}

/// A random ranking of `len` unique ids drawn from `pool` ids, and a
/// non-empty relevant set drawn from the same pool.
pub fn random_judged_ranking(rng: &mut TestRng, pool: usize, len: usize) -> (Vec<String>, BTreeSet<String>) {
    let mut ids: Vec<String> = (0..pool).map(|i| format!("d{i}")).collect();
    ids.shuffle(rng);
    let ranking = ids[..len.min(pool)].to_vec();
    let n_rel = rng.gen_range(1..=pool.min(8));
    let relevant = ids.choose_multiple(rng, n_rel).cloned().collect();
    (ranking, relevant)
}
