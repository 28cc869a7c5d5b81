use serde::Serialize;

use super::Triplet;
use crate::textcore::tokenize;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TripletStats {
    pub samples: usize,
    pub documents: usize,
    pub mean_documents: f64,
    /// Mean over all documents, not over triplets.
    pub mean_doc_tokens: f64,
    pub mean_query_tokens: f64,
    pub mean_summary_tokens: f64,
}

pub fn triplet_stats(triplets: &[Triplet]) -> Result<TripletStats> {
    if triplets.is_empty() {
        return Err(Error::invalid("statistics of an empty triplet list"));
    }
    let mut documents = 0;
    let mut doc_tokens = 0;
    let mut query_tokens = 0;
    let mut summary_tokens = 0;
    for t in triplets {
        documents += t.documents.len();
        doc_tokens += t.documents.iter().map(|d| tokenize(d).len()).sum::<usize>();
        query_tokens += tokenize(&t.query).len();
        summary_tokens += tokenize(&t.summary).len();
    }
    let n = triplets.len() as f64;
    Ok(TripletStats {
        samples: triplets.len(),
        documents,
        mean_documents: documents as f64 / n,
        mean_doc_tokens: if documents == 0 { 0.0 } else { doc_tokens as f64 / documents as f64 },
        mean_query_tokens: query_tokens as f64 / n,
        mean_summary_tokens: summary_tokens as f64 / n,
    })
}
