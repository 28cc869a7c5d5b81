//! Okapi BM25 over an in-memory inverted index of chunks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ChunkId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// One chunk handed to [`RetrievalIndex::build`].
#[derive(Clone, Debug)]
pub struct IndexedChunk {
    pub id: ChunkId,
    pub tokens: Vec<String>,
    pub article: String,
    pub ordinal: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkMeta {
    pub article: String,
    pub ordinal: usize,
}

/// Postings refer to chunks by their slot, the position of the chunk in
/// ascending id order, so sorting postings by slot sorts them by id.
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    params: Bm25Params,
    ids: Vec<ChunkId>,
    slot_of: HashMap<ChunkId, usize>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<usize>,
    meta: Vec<ChunkMeta>,
    avg_len: f64,
}

impl RetrievalIndex {
    pub fn build(chunks: Vec<IndexedChunk>, params: Bm25Params) -> Result<Self> {
        if chunks.is_empty() {
            return Err(Error::invalid("cannot index an empty chunk list"));
        }
        if !(params.k1 > 0.0) || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::invalid(format!("bad BM25 parameters k1={} b={}", params.k1, params.b)));
        }
        let mut chunks = chunks;
        chunks.sort_by_key(|c| c.id);
        if let Some(w) = chunks.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid(format!("duplicate chunk id {}", w[0].id)));
        }

        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut ids = Vec::with_capacity(chunks.len());
        let mut doc_len = Vec::with_capacity(chunks.len());
        let mut meta = Vec::with_capacity(chunks.len());
        for (slot, chunk) in chunks.into_iter().enumerate() {
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &chunk.tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, n) in tf {
                postings.entry(term.to_string()).or_default().push((slot, n));
            }
            ids.push(chunk.id);
            doc_len.push(chunk.tokens.len());
            meta.push(ChunkMeta {
                article: chunk.article,
                ordinal: chunk.ordinal,
            });
        }
        let avg_len = doc_len.iter().sum::<usize>() as f64 / doc_len.len() as f64;
        let slot_of = ids.iter().enumerate().map(|(s, &id)| (id, s)).collect();
        Ok(RetrievalIndex {
            params,
            ids,
            slot_of,
            postings,
            doc_len,
            meta,
            avg_len,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn n_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, id: ChunkId) -> Option<usize> {
        self.slot_of.get(&id).map(|&s| self.doc_len[s])
    }

    pub fn meta(&self, id: ChunkId) -> Option<&ChunkMeta> {
        self.slot_of.get(&id).map(|&s| &self.meta[s])
    }

    /// Chunk ids in ascending order.
    pub fn chunk_ids(&self) -> &[ChunkId] {
        &self.ids
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `(chunk id, term frequency)` pairs in ascending chunk id order.
    pub fn postings(&self, term: &str) -> Vec<(ChunkId, u32)> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|&(s, tf)| (self.ids[s], tf)).collect())
            .unwrap_or_default()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, len: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len as f64 / self.avg_len))
    }

    pub fn score(&self, query: &[String], id: ChunkId) -> Result<f64> {
        let slot = *self
            .slot_of
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("unknown chunk id {id}")))?;
        let mut total = 0.0;
        for term in query {
            let Some(list) = self.postings.get(term) else { continue };
            if let Ok(pos) = list.binary_search_by_key(&slot, |&(s, _)| s) {
                total += self.term_weight(self.idf(term), list[pos].1, self.doc_len[slot]);
            }
        }
        Ok(total)
    }

    /// Scores of every chunk, indexed by slot. Per chunk the terms are summed
    /// in query order, so values agree bit for bit with [`Self::score`].
    fn score_all(&self, query: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_docs()];
        for term in query {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for &(slot, tf) in list {
                acc[slot] += self.term_weight(idf, tf, self.doc_len[slot]);
            }
        }
        acc
    }

    /// Best `k` chunks with their scores, by descending score then ascending
    /// id. Zero-score chunks are included.
    pub fn top_k_scored(&self, query: &[String], k: usize, exclude_article: Option<&str>) -> Vec<(ChunkId, f64)> {
        let scores = self.score_all(query);
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(s, _)| exclude_article.map_or(true, |a| self.meta[s].article != a))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked.into_iter().map(|(s, sc)| (self.ids[s], sc)).collect()
    }

    pub fn top_k(&self, query: &[String], k: usize, exclude_article: Option<&str>) -> Vec<ChunkId> {
        self.top_k_scored(query, k, exclude_article)
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }

    /// Text dump, one line per term in lexicographic order:
    /// `term<TAB>id:tf,id:tf,...`.
    pub fn dump(&self) -> String {
        let sorted: BTreeMap<&String, &Vec<(usize, u32)>> = self.postings.iter().collect();
        let mut out = String::new();
        for (term, list) in sorted {
            let entries: Vec<String> = list.iter().map(|&(s, tf)| format!("{}:{}", self.ids[s], tf)).collect();
            let _ = writeln!(out, "{term}\t{}", entries.join(","));
        }
        out
    }
}
