//! Knowledge graph construction from a corpus.
//!
//! Documents are chunked, an LLM lists `head | relation | tail` lines for
//! each chunk, bare triples are deduplicated across chunks (first source
//! wins), and every surviving triplet gets a textual representation (TTR)
//! written by the LLM from its source chunk.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Document;
use crate::kg::{BareTriple, KgError, KnowledgeGraph, Triplet};
use crate::providers::{ChatModel, ProviderError};
use crate::template::{PromptTemplate, TemplateError, TemplateId, TemplateSet};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("invalid chunking: max_chars {max_chars} must exceed overlap {overlap}")]
    InvalidChunking { max_chars: usize, overlap: usize },
    #[error("extraction failed for every document ({} failures)", .0.len())]
    AllDocumentsFailed(Vec<DocFailure>),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Graph(#[from] KgError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocFailure {
    pub doc_id: String,
    pub error: String,
}

/// Splits a document into windows of at most `max_chars` characters, each
/// starting `max_chars - overlap` characters after the previous one.
///
/// A text that already fits is returned unchanged; otherwise chunk ids are
/// `{doc_id}#{k}` for k = 0, 1, ...
pub fn chunk_document(doc: &Document, max_chars: usize, overlap: usize) -> Result<Vec<Document>, BuildError> {
    if max_chars == 0 || overlap >= max_chars {
        return Err(BuildError::InvalidChunking { max_chars, overlap });
    }
    let chars: Vec<char> = doc.text.chars().collect();
    if chars.len() <= max_chars {
        return Ok(vec![doc.clone()]);
    }
    let stride = max_chars - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + max_chars).min(chars.len());
        chunks.push(Document {
            doc_id: format!("{}#{}", doc.doc_id, chunks.len()),
            text: chars[start..end].iter().collect(),
            meta: doc.meta.clone(),
        });
        if end == chars.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub raw_response: String,
    pub parsed: Vec<BareTriple>,
    pub failures: Vec<String>,
}

/// Parses one `head | relation | tail` triple per line. Blank lines are
/// skipped; anything else that does not split into three non-empty fields
/// is returned as a failure.
pub fn parse_triples(response: &str) -> (Vec<BareTriple>, Vec<String>) {
    let mut parsed = Vec::new();
    let mut failures = Vec::new();
    for line in response.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        match fields.as_slice() {
            [h, r, t] => {
                let bare = BareTriple::new(h, r, t);
                if bare.head.is_empty() || bare.relation.is_empty() || bare.tail.is_empty() {
                    failures.push(line.to_string());
                } else {
                    parsed.push(bare);
                }
            }
            _ => failures.push(line.to_string()),
        }
    }
    (parsed, failures)
}

pub fn extract_triples(
    doc: &Document,
    chat: &dyn ChatModel,
    template: &PromptTemplate,
) -> Result<ExtractionRecord, BuildError> {
    template.expect_id(TemplateId::KgExtract)?;
    let req = template.request(&[("document", &doc.text)])?;
    let raw_response = chat.chat(&req)?;
    let (parsed, failures) = parse_triples(&raw_response);
    Ok(ExtractionRecord {
        doc_id: doc.doc_id.clone(),
        raw_response,
        parsed,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TtrOutcome {
    Generated(String),
    /// Both attempts returned empty text; holds the `head relation tail` fallback.
    Fallback(String),
    /// The triplet already had a TTR and regeneration was not requested.
    Kept(String),
}

impl TtrOutcome {
    pub fn text(&self) -> &str {
        match self {
            TtrOutcome::Generated(s) | TtrOutcome::Fallback(s) | TtrOutcome::Kept(s) => s,
        }
    }

    pub fn into_text(self) -> String {
        match self {
            TtrOutcome::Generated(s) | TtrOutcome::Fallback(s) | TtrOutcome::Kept(s) => s,
        }
    }
}

pub fn fallback_ttr(t: &Triplet) -> String {
    format!("{} {} {}", t.head, t.relation, t.tail)
}

/// Writes the textual representation of `t` grounded in `source`. An empty
/// completion is retried once before falling back to the bare triple text.
pub fn generate_ttr(
    t: &Triplet,
    source: &Document,
    chat: &dyn ChatModel,
    template: &PromptTemplate,
    regenerate: bool,
) -> Result<TtrOutcome, BuildError> {
    template.expect_id(TemplateId::Ttr)?;
    if !t.ttr.trim().is_empty() && !regenerate {
        return Ok(TtrOutcome::Kept(t.ttr.clone()));
    }
    let triplet = t.bare().to_string();
    let req = template.request(&[("triplet", &triplet), ("document", &source.text)])?;
    for _ in 0..2 {
        let text = chat.chat(&req)?;
        let text = text.trim();
        if !text.is_empty() {
            return Ok(TtrOutcome::Generated(text.to_string()));
        }
    }
    Ok(TtrOutcome::Fallback(fallback_ttr(t)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub max_chars: usize,
    pub overlap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            max_chars: 2000,
            overlap: 200,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub documents: usize,
    pub chunks: usize,
    pub triples_extracted: usize,
    pub duplicates_merged: usize,
    pub triplets: usize,
    pub unparsed_lines: usize,
    pub ttr_generated: usize,
    pub ttr_fallbacks: usize,
    pub ttr_failures: usize,
    pub failed_documents: Vec<DocFailure>,
}

/// Builds a knowledge graph from `corpus`.
///
/// Extraction and TTR generation run in parallel; results are merged in
/// corpus order, so the output is deterministic for deterministic providers.
/// The build only fails when every document fails extraction.
pub fn build_kg(
    corpus: &[Document],
    chat: &dyn ChatModel,
    templates: &TemplateSet,
    opts: BuildOptions,
) -> Result<(KnowledgeGraph, BuildReport), BuildError> {
    if corpus.is_empty() {
        return Err(BuildError::EmptyCorpus);
    }
    for d in corpus {
        d.validate().map_err(BuildError::InvalidDocument)?;
    }
    let mut report = BuildReport {
        documents: corpus.len(),
        ..Default::default()
    };

    let per_doc: Vec<Vec<Document>> = corpus
        .iter()
        .map(|d| chunk_document(d, opts.max_chars, opts.overlap))
        .collect::<Result<_, _>>()?;
    report.chunks = per_doc.iter().map(Vec::len).sum();

    let extracted: Vec<Vec<Result<ExtractionRecord, BuildError>>> = per_doc
        .par_iter()
        .map(|chunks| {
            chunks
                .par_iter()
                .map(|c| extract_triples(c, chat, &templates.kg_extract))
                .collect()
        })
        .collect();

    let mut kg = KnowledgeGraph::new();
    let mut sources: HashMap<String, &Document> = HashMap::new();
    for ((doc, chunks), results) in corpus.iter().zip(&per_doc).zip(extracted) {
        let mut errors = Vec::new();
        for (chunk, result) in chunks.iter().zip(results) {
            match result {
                Ok(rec) => {
                    report.unparsed_lines += rec.failures.len();
                    report.triples_extracted += rec.parsed.len();
                    for bare in rec.parsed {
                        if kg.contains(&bare) {
                            report.duplicates_merged += 1;
                            continue;
                        }
                        kg.insert(
                            Triplet::new(&bare.head, &bare.relation, &bare.tail)
                                .with_source(&chunk.doc_id),
                        )?;
                        sources.entry(chunk.doc_id.clone()).or_insert(chunk);
                    }
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
        if errors.len() == chunks.len() {
            report.failed_documents.push(DocFailure {
                doc_id: doc.doc_id.clone(),
                error: errors.join("; "),
            });
        }
    }
    if report.failed_documents.len() == corpus.len() {
        return Err(BuildError::AllDocumentsFailed(report.failed_documents));
    }

    let outcomes: Vec<Result<TtrOutcome, BuildError>> = kg
        .triplets()
        .par_iter()
        .map(|t| {
            let source = sources[&t.source_doc_id];
            generate_ttr(t, source, chat, &templates.ttr, false)
        })
        .collect();
    for (pos, outcome) in outcomes.into_iter().enumerate() {
        let text = match outcome {
            Ok(o) => {
                match o {
                    TtrOutcome::Fallback(_) => report.ttr_fallbacks += 1,
                    _ => report.ttr_generated += 1,
                }
                o.into_text()
            }
            Err(e @ (BuildError::Template(_) | BuildError::Graph(_))) => return Err(e),
            Err(e) => {
                log::warn!("TTR generation failed for triplet {pos}: {e}");
                report.ttr_failures += 1;
                fallback_ttr(kg.triplet(pos))
            }
        };
        kg.set_ttr(pos, text);
    }
    report.triplets = kg.len();
    Ok((kg, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{MockChat, MockRule};

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text)
    }

    #[test]
    fn short_text_is_one_chunk() {
        let d = doc("d", "hello");
        assert_eq!(chunk_document(&d, 10, 2).unwrap(), vec![d]);
    }

    #[test]
    fn stride_arithmetic() {
        let d = doc("d", "0123456789");
        let chunks = chunk_document(&d, 4, 1).unwrap();
        let texts: Vec<_> = chunks.iter().map(|c| c.text.as_str()).collect();
        // [0,4), [3,7), [6,10)
        assert_eq!(texts, ["0123", "3456", "6789"]);
        let ids: Vec<_> = chunks.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, ["d#0", "d#1", "d#2"]);
    }

    #[test]
    fn chunks_reconstruct_text() {
        let text: String = (0..257).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        for (max, ov) in [(10, 0), (10, 3), (64, 63), (7, 6)] {
            let chunks = chunk_document(&doc("d", &text), max, ov).unwrap();
            let mut rebuilt = chunks[0].text.clone();
            for c in &chunks[1..] {
                rebuilt.extend(c.text.chars().skip(ov));
            }
            assert_eq!(rebuilt, text, "max={max} overlap={ov}");
            assert!(chunks.iter().all(|c| c.text.chars().count() <= max));
        }
        assert!(chunk_document(&doc("d", "x"), 4, 4).is_err());
    }

    #[test]
    fn extraction_parses_lines() {
        let t = PromptTemplate::builtin(TemplateId::KgExtract);
        let d = doc("d", "Paris is the capital of France.");
        let rec = extract_triples(&d, &MockChat::fixed("Paris | capital_of | France"), &t).unwrap();
        assert_eq!(rec.parsed, vec![BareTriple::new("Paris", "capital_of", "France")]);

        let rec = extract_triples(&d, &MockChat::fixed("A | r | B\nthis is not a triple"), &t).unwrap();
        assert_eq!(rec.parsed.len(), 1);
        assert_eq!(rec.failures, vec!["this is not a triple".to_string()]);

        let rec = extract_triples(&d, &MockChat::fixed(""), &t).unwrap();
        assert!(rec.parsed.is_empty() && rec.failures.is_empty());

        let wrong = PromptTemplate::builtin(TemplateId::Ttr);
        assert!(matches!(
            extract_triples(&d, &MockChat::echo(), &wrong),
            Err(BuildError::Template(TemplateError::WrongTemplate { .. }))
        ));
    }

    #[test]
    fn parse_rejects_empty_fields() {
        let (p, f) = parse_triples(" A | | B \n| r | B\nA | r | B | C\n  \n X|y|Z ");
        assert_eq!(p, vec![BareTriple::new("X", "y", "Z")]);
        assert_eq!(f.len(), 3);
    }

    #[test]
    fn ttr_passthrough_and_fallback() {
        let t = PromptTemplate::builtin(TemplateId::Ttr);
        let tr = Triplet::new("Paris", "capital_of", "France").with_source("d");
        let d = doc("d", "Paris is the capital of France.");
        let out = generate_ttr(&tr, &d, &MockChat::fixed("  X relates to Y because Z \n"), &t, false).unwrap();
        assert_eq!(out, TtrOutcome::Generated("X relates to Y because Z".into()));

        let empty = MockChat::fixed("");
        let out = generate_ttr(&tr, &d, &empty, &t, false).unwrap();
        assert_eq!(out, TtrOutcome::Fallback("Paris capital_of France".into()));
        assert_eq!(empty.calls(), 2);

        let kept = tr.clone().with_ttr("already");
        assert_eq!(generate_ttr(&kept, &d, &empty, &t, false).unwrap().text(), "already");
        assert_eq!(empty.calls(), 2);
    }

    #[test]
    fn ttr_batch_preserves_order() {
        let t = PromptTemplate::builtin(TemplateId::Ttr);
        let d = doc("d", "source text");
        let triplets: Vec<Triplet> = (0..100)
            .map(|i| Triplet::new(&format!("e{i}"), "r", &format!("e{}", i + 1)).with_source("d"))
            .collect();
        let chat = MockChat::echo();
        let out: Vec<String> = triplets
            .par_iter()
            .map(|tr| generate_ttr(tr, &d, &chat, &t, false).unwrap().into_text())
            .collect();
        assert_eq!(out.len(), 100);
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s, &format!("e{i} | r | e{}", i + 1));
        }
    }

    fn extraction_rules() -> Vec<MockRule> {
        vec![
            MockRule::reply(TemplateId::KgExtract, "document", "alpha", "A | r | B\nB | s | C"),
            MockRule::reply(TemplateId::KgExtract, "document", "beta", "A | r | B"),
            MockRule::fail(Some(TemplateId::KgExtract), "broken", "extractor down"),
            MockRule::reply(TemplateId::KgExtract, "document", "", ""),
        ]
    }

    #[test]
    fn build_single_document() {
        let chat = MockChat::with_rules(extraction_rules());
        let (kg, report) = build_kg(&[doc("d1", "alpha")], &chat, &TemplateSet::builtin(), Default::default()).unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(kg.triplet(0).ttr, "A | r | B");
        assert_eq!(report.triplets, 2);
        assert_eq!(report.ttr_generated, 2);
        kg.check_invariants().unwrap();
    }

    #[test]
    fn build_dedups_across_documents() {
        let chat = MockChat::with_rules(extraction_rules());
        let corpus = [doc("d1", "beta"), doc("d2", "alpha")];
        let (kg, report) = build_kg(&corpus, &chat, &TemplateSet::builtin(), Default::default()).unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(kg.triplet(0).source_doc_id, "d1");
        assert_eq!(report.triples_extracted, 3);
        assert_eq!(report.duplicates_merged, 1);
    }

    #[test]
    fn build_fails_only_when_every_document_fails() {
        let chat = MockChat::with_rules(extraction_rules());
        let t = TemplateSet::builtin();
        let err = build_kg(&[doc("d1", "broken"), doc("d2", "broken too")], &chat, &t, Default::default()).unwrap_err();
        match err {
            BuildError::AllDocumentsFailed(f) => {
                assert_eq!(f.len(), 2);
                assert!(f[0].error.contains("extractor down"));
            }
            other => panic!("{other:?}"),
        }
        let (kg, report) = build_kg(&[doc("d1", "broken"), doc("d2", "alpha")], &chat, &t, Default::default()).unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(report.failed_documents.len(), 1);
        assert!(matches!(build_kg(&[], &chat, &t, Default::default()), Err(BuildError::EmptyCorpus)));
    }

    #[test]
    fn ttr_provider_error_falls_back() {
        let chat = MockChat::with_rules(vec![
            MockRule::reply(TemplateId::KgExtract, "document", "", "A | r | B"),
            MockRule::fail(Some(TemplateId::Ttr), "", "ttr down"),
        ]);
        let (kg, report) = build_kg(&[doc("d", "x")], &chat, &TemplateSet::builtin(), Default::default()).unwrap();
        assert_eq!(kg.triplet(0).ttr, "A r B");
        assert_eq!(report.ttr_failures, 1);
    }
}
