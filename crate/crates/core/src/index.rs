//! Exact dense vector index.
//!
//! Vectors are stored as little-endian `f32`; scores are inner products
//! accumulated in `f64`. Search is a full scan with a deterministic order:
//! score descending, then key ascending.
//!
//! File layout:
//!
//! ```text
//! magic   8 bytes  "KGCQRIX1"
//! version u32 LE   1
//! dim     u32 LE
//! count   u64 LE
//! count × { key_len u32 LE, key bytes (UTF-8), dim × f32 LE }
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::Document;
use crate::kg::KnowledgeGraph;
use crate::providers::{dot_f32, Embedder, EmbeddingVector, ProviderError};

pub const MAGIC: &[u8; 8] = b"KGCQRIX1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("top_n must be positive")]
    InvalidTopN,
    #[error("index dimension must be positive")]
    ZeroDimension,
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
    #[error("index file is truncated")]
    Truncated,
    #[error("corrupt index entry {0}: {1}")]
    Corrupt(usize, String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A key and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub key: String,
    pub score: f64,
}

/// Score descending, then key ascending.
pub fn rank_order(a_score: f64, a_key: &str, b_score: f64, b_key: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_key.cmp(b_key))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    keys: Vec<String>,
    data: Vec<f32>,
    lookup: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        Ok(Self {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            lookup: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.lookup.contains_key(key)
    }

    pub fn vector_at(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.position(key).map(|p| self.vector_at(p))
    }

    pub fn add(&mut self, key: impl Into<String>, vector: &EmbeddingVector) -> Result<(), IndexError> {
        let key = key.into();
        if vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        if self.lookup.contains_key(&key) {
            return Err(IndexError::DuplicateKey(key));
        }
        self.lookup.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(vector.values());
        Ok(())
    }

    /// Inner product of the stored vector at `pos` with `query`.
    pub fn score_at(&self, pos: usize, query: &[f64]) -> f64 {
        self.vector_at(pos)
            .iter()
            .zip(query)
            .map(|(&x, &q)| f64::from(x) * q)
            .sum()
    }

    /// The `top_n` entries with the highest inner product against `query`,
    /// which need not be unit norm.
    pub fn search(&self, query: &[f64], top_n: usize) -> Result<Vec<Hit>, IndexError> {
        if top_n == 0 {
            return Err(IndexError::InvalidTopN);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|pos| (self.score_at(pos, query), pos))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(a.0, &self.keys[a.1], b.0, &self.keys[b.1])
        };
        if top_n < scored.len() {
            scored.select_nth_unstable_by(top_n - 1, cmp);
            scored.truncate(top_n);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, pos)| Hit {
                key: self.keys[pos].clone(),
                score,
            })
            .collect())
    }

    pub fn search_embedding(&self, query: &EmbeddingVector, top_n: usize) -> Result<Vec<Hit>, IndexError> {
        self.search(&query.to_f64(), top_n)
    }

    /// Inner product between a stored entry and a unit embedding.
    pub fn similarity(&self, pos: usize, query: &EmbeddingVector) -> f64 {
        dot_f32(self.vector_at(pos), query.values())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (pos, key) in self.keys.iter().enumerate() {
            w.write_all(&(key.len() as u32).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            for x in self.vector_at(pos) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// Parses a complete index; nothing is returned unless every entry is valid.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IndexError> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        let mut ix = Self::new(dim)?;
        let mut buf = vec![0u8; dim * 4];
        for n in 0..count as usize {
            let key_len = read_u32(&mut r)? as usize;
            let mut key = vec![0u8; key_len];
            read_exact(&mut r, &mut key)?;
            let key = String::from_utf8(key)
                .map_err(|_| IndexError::Corrupt(n, "key is not UTF-8".into()))?;
            read_exact(&mut r, &mut buf)?;
            let values: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let v = EmbeddingVector::from_normalized(values)
                .ok_or_else(|| IndexError::Corrupt(n, "vector is not unit norm".into()))?;
            ix.add(key, &v).map_err(|e| IndexError::Corrupt(n, e.to_string()))?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(IndexError::Corrupt(count as usize, "trailing bytes".into()));
        }
        Ok(ix)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), IndexError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => IndexError::Truncated,
        _ => IndexError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, IndexError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, IndexError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

const EMBED_BATCH: usize = 256;

fn index_texts<'a, I>(dim: usize, entries: I, embedder: &dyn Embedder) -> Result<VectorIndex, BuildIndexError>
where
    I: Iterator<Item = (String, &'a str)>,
{
    let mut ix = VectorIndex::new(dim)?;
    let entries: Vec<(String, &str)> = entries.collect();
    for batch in entries.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|(_, t)| t.to_string()).collect();
        let vectors = embedder.embed(&texts)?;
        if vectors.len() != batch.len() {
            return Err(BuildIndexError::Provider(ProviderError::Validation(format!(
                "asked for {} embeddings, got {}",
                batch.len(),
                vectors.len()
            ))));
        }
        for ((key, _), v) in batch.iter().zip(&vectors) {
            ix.add(key.clone(), v)?;
        }
    }
    Ok(ix)
}

#[derive(Debug, Error)]
pub enum BuildIndexError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Embeds every document text, keyed by `doc_id`.
pub fn index_documents(corpus: &[Document], embedder: &dyn Embedder) -> Result<VectorIndex, BuildIndexError> {
    index_texts(
        embedder.dim(),
        corpus.iter().map(|d| (d.doc_id.clone(), d.text.as_str())),
        embedder,
    )
}

/// Embeds every triplet's TTR, keyed by its bare-triple key.
pub fn index_triplets(kg: &KnowledgeGraph, embedder: &dyn Embedder) -> Result<VectorIndex, BuildIndexError> {
    index_texts(
        embedder.dim(),
        kg.triplets().iter().map(|t| (t.key(), t.ttr.as_str())),
        embedder,
    )
}
