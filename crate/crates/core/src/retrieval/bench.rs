//! Latency and work of subgraph completion under different traversals.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::QueryRecord;
use crate::kg::KnowledgeGraph;
use crate::pipeline::{complete_subgraph, extract_subgraph, PipelineParams, TtrVectors, UNBOUNDED};
use crate::providers::Embedder;

use super::RetrievalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMode {
    /// Completion with unbounded beam width.
    NaiveBfs,
    /// Completion with the configured beam width.
    Beam,
    /// Extraction only.
    NoCompletion,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::NaiveBfs, BenchMode::Beam, BenchMode::NoCompletion];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::NaiveBfs => "naive_bfs",
            BenchMode::Beam => "beam",
            BenchMode::NoCompletion => "no_completion",
        }
    }

    /// Parses a comma-separated list such as `naive_bfs,beam`.
    pub fn parse_list(s: &str) -> Result<Vec<BenchMode>, String> {
        let modes = s
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        if modes.is_empty() {
            return Err("no benchmark modes given".into());
        }
        Ok(modes)
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected naive_bfs, beam or no_completion)"))
    }
}

impl Serialize for BenchMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub query_id: String,
    pub wall_ms: f64,
    pub expansions: u64,
}

/// Times extraction plus completion for each query under each mode. The
/// query embedding is computed once per query, outside the timed region.
/// Rows are grouped by mode, in the order given, then by query.
pub fn bench_completion(
    kg: &KnowledgeGraph,
    ttr: &TtrVectors,
    embedder: &dyn Embedder,
    queries: &[QueryRecord],
    params: &PipelineParams,
    modes: &[BenchMode],
) -> Result<Vec<BenchRow>, RetrievalError> {
    if modes.is_empty() {
        return Err(RetrievalError::Validation("no benchmark modes given".into()));
    }
    params.validate()?;
    let mut by_mode: Vec<Vec<BenchRow>> = vec![Vec::new(); modes.len()];
    for q in queries {
        let v = embedder.embed_one(&q.query)?;
        for (slot, &mode) in modes.iter().enumerate() {
            let started = Instant::now();
            let initial = extract_subgraph(&v, kg, ttr, params.k_extract)?;
            let expansions = match mode {
                BenchMode::NoCompletion => 0,
                BenchMode::NaiveBfs | BenchMode::Beam => {
                    let width = if mode == BenchMode::Beam { params.beam_width } else { UNBOUNDED };
                    let p = PipelineParams {
                        beam_width: width,
                        ..*params
                    };
                    let (_, stats) = complete_subgraph(kg, &initial, Some(&v), ttr, &p);
                    stats.traversal.expansions
                }
            };
            by_mode[slot].push(BenchRow {
                mode,
                query_id: q.query_id.clone(),
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                expansions,
            });
        }
    }
    Ok(by_mode.into_iter().flatten().collect())
}

/// Writes rows as CSV with header `mode,query_id,wall_ms,expansions`.
pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
