//! Dataset construction: QMDSCNN triplets from news-style articles, QMDSIR
//! triplets from search-log records, query ablations, alignment analysis and
//! corpus statistics.

mod align;
mod io;
mod qmdscnn;
mod qmdsir;
mod stats;
pub mod synthetic;
mod variants;

use serde::{Deserialize, Serialize};

pub use align::{alignment_histogram, sentence_alignment, summary_span};
pub use io::{read_jsonl, write_jsonl};
pub use qmdscnn::{build_qmdscnn, chunk_article, chunk_article_with, Chunk, QmdscnnConfig};
pub use qmdsir::{check_qmdsir, filter_qmdsir, FilterOutcome, IrRecord, Rejection, RejectReason, COVERAGE_THRESHOLD};
pub use stats::{triplet_stats, TripletStats};
pub use variants::{make_query_variant, QueryVariant, DISSIMILAR_MAX_F1, DULL_QUERY};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub paragraphs: Vec<String>,
    pub summary: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    OriginalChunk,
    Retrieved,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletMeta {
    /// Per-document origin tag.
    #[serde(default)]
    pub origins: Vec<Origin>,
    /// Per-document retrieval rank (1-based), `None` for original chunks.
    #[serde(default)]
    pub ranks: Vec<Option<usize>>,
    #[serde(default)]
    pub source_id: String,
    /// Per-document id of the article or record the text came from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub doc_sources: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: String,
    pub documents: Vec<String>,
    pub summary: String,
    #[serde(default)]
    pub meta: TripletMeta,
}

impl Triplet {
    /// Checks the structural invariants: at least one document, no empty
    /// document, and metadata (when present) covering every document.
    pub fn validate(&self) -> crate::Result<()> {
        if self.documents.is_empty() {
            return Err(crate::Error::invalid("triplet has no documents"));
        }
        if let Some(i) = self.documents.iter().position(|d| d.trim().is_empty()) {
            return Err(crate::Error::invalid(format!("document {i} is empty")));
        }
        let n = self.documents.len();
        let m = &self.meta;
        if !m.origins.is_empty() && m.origins.len() != n {
            return Err(crate::Error::invalid(format!("{} origin tags for {n} documents", m.origins.len())));
        }
        if !m.ranks.is_empty() && m.ranks.len() != n {
            return Err(crate::Error::invalid(format!("{} ranks for {n} documents", m.ranks.len())));
        }
        Ok(())
    }
}
