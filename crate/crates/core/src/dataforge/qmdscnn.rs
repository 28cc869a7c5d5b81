use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Article, Origin, Triplet, TripletMeta};
use crate::bm25::{Bm25Params, ChunkId, IndexedChunk, RetrievalIndex};
use crate::textcore::tokenize;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub article: String,
    pub ordinal: usize,
    pub paragraphs: Vec<String>,
}

impl Chunk {
    /// Paragraphs joined by newlines.
    pub fn text(&self) -> String {
        self.paragraphs.join("\n")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QmdscnnConfig {
    pub k_retrieved: usize,
    /// Relative weight of chunk sizes 1, 2, ... paragraphs.
    pub chunk_size_weights: Vec<f64>,
    pub bm25: Bm25Params,
}

impl Default for QmdscnnConfig {
    fn default() -> Self {
        QmdscnnConfig {
            k_retrieved: 4,
            chunk_size_weights: vec![1.0; 4],
            bm25: Bm25Params::default(),
        }
    }
}

/// Splits an article into runs of one to four consecutive paragraphs, sizes
/// drawn uniformly.
pub fn chunk_article(article: &Article, seed: u64) -> Result<Vec<Chunk>> {
    chunk_article_with(article, seed, &[1.0; 4])
}

pub fn chunk_article_with(article: &Article, seed: u64, size_weights: &[f64]) -> Result<Vec<Chunk>> {
    if article.paragraphs.is_empty() {
        return Err(Error::invalid(format!("article {} has no paragraphs", article.id)));
    }
    let sizes = WeightedIndex::new(size_weights)
        .map_err(|e| Error::invalid(format!("chunk size weights {size_weights:?}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chunks = Vec::new();
    let mut rest = &article.paragraphs[..];
    while !rest.is_empty() {
        let take = (sizes.sample(&mut rng) + 1).min(rest.len());
        let (head, tail) = rest.split_at(take);
        chunks.push(Chunk {
            article: article.id.clone(),
            ordinal: chunks.len(),
            paragraphs: head.to_vec(),
        });
        rest = tail;
    }
    Ok(chunks)
}

fn article_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn validate_corpus(corpus: &[Article]) -> Result<()> {
    if corpus.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 articles for retrieval, got {}",
            corpus.len()
        )));
    }
    let mut seen = HashSet::new();
    for a in corpus {
        if a.title.trim().is_empty() {
            return Err(Error::invalid(format!("article {} has an empty title", a.id)));
        }
        if !seen.insert(a.id.as_str()) {
            return Err(Error::invalid(format!("duplicate article id {}", a.id)));
        }
    }
    Ok(())
}

/// One triplet per article: the title as query, the article's own chunks in
/// order, then up to `k_retrieved` foreign chunks ranked by BM25 against the
/// title. Chunks scoring zero are never appended.
pub fn build_qmdscnn(corpus: &[Article], seed: u64, config: &QmdscnnConfig) -> Result<Vec<Triplet>> {
    validate_corpus(corpus)?;
    let per_article: Vec<Vec<Chunk>> = corpus
        .iter()
        .enumerate()
        .map(|(i, a)| chunk_article_with(a, article_seed(seed, i), &config.chunk_size_weights))
        .collect::<Result<_>>()?;

    let mut all: Vec<&Chunk> = Vec::new();
    let mut indexed = Vec::new();
    for chunks in &per_article {
        for c in chunks {
            indexed.push(IndexedChunk {
                id: all.len() as ChunkId,
                tokens: tokenize(&c.text()),
                article: c.article.clone(),
                ordinal: c.ordinal,
            });
            all.push(c);
        }
    }
    let index = RetrievalIndex::build(indexed, config.bm25)?;
    log::info!(
        "indexed {} chunks from {} articles (avg {:.1} tokens)",
        index.n_docs(),
        corpus.len(),
        index.avg_len()
    );

    let triplets = corpus
        .par_iter()
        .zip(per_article.par_iter())
        .map(|(article, own)| {
            let hits: Vec<ChunkId> = index
                .top_k_scored(&tokenize(&article.title), config.k_retrieved, Some(&article.id))
                .into_iter()
                .filter(|&(_, score)| score > 0.0)
                .map(|(id, _)| id)
                .collect();

            let mut documents: Vec<String> = own.iter().map(Chunk::text).collect();
            let mut origins = vec![Origin::OriginalChunk; own.len()];
            let mut ranks = vec![None; own.len()];
            let mut doc_sources = vec![article.id.clone(); own.len()];
            for (rank, id) in hits.into_iter().enumerate() {
                let chunk = all[id as usize];
                documents.push(chunk.text());
                origins.push(Origin::Retrieved);
                ranks.push(Some(rank + 1));
                doc_sources.push(chunk.article.clone());
            }
            Triplet {
                query: article.title.clone(),
                documents,
                summary: article.summary.clone(),
                meta: TripletMeta {
                    origins,
                    ranks,
                    source_id: article.id.clone(),
                    doc_sources,
                },
            }
        })
        .collect();
    Ok(triplets)
}
