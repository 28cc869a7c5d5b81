use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Origin, Triplet, TripletMeta};
use crate::rouge::rouge_n;
use crate::textcore::{split_sentences, tokenize};

/// Minimum ROUGE-1 coverage every answer sentence needs in some document.
pub const COVERAGE_THRESHOLD: f64 = 0.8;

const MIN_SENTENCES: usize = 2;
const MIN_DOCUMENTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrRecord {
    pub query: String,
    pub answer_passage: String,
    pub documents: Vec<String>,
    pub answer_source_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectReason {
    /// `answer_source_index` points past the document list.
    InvalidSourceIndex,
    TooFewSentences { sentences: usize },
    TooFewDocuments { documents: usize },
    LowCoverage { sentence: usize, coverage: f64 },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::InvalidSourceIndex => write!(f, "answer source index out of range"),
            RejectReason::TooFewSentences { sentences } => {
                write!(f, "(i) answer has {sentences} sentence(s), need {MIN_SENTENCES}")
            }
            RejectReason::TooFewDocuments { documents } => {
                write!(f, "(ii) {documents} document(s) left, need {MIN_DOCUMENTS}")
            }
            RejectReason::LowCoverage { sentence, coverage } => write!(
                f,
                "(iii) sentence {sentence} coverage {coverage:.4} below {COVERAGE_THRESHOLD}"
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Triplet>,
    pub rejected: Vec<Rejection>,
}

/// Fraction of the sentence's unigrams (clipped) found in the document.
fn coverage(sentence: &[String], document: &[String]) -> f64 {
    rouge_n(document, sentence, 1).recall
}

/// Applies the three acceptance criteria to a summary and its candidate
/// documents, returning the first one violated.
pub fn check_qmdsir(summary: &str, documents: &[String]) -> Option<RejectReason> {
    let sentences = split_sentences(summary);
    if sentences.len() < MIN_SENTENCES {
        return Some(RejectReason::TooFewSentences {
            sentences: sentences.len(),
        });
    }
    if documents.len() < MIN_DOCUMENTS {
        return Some(RejectReason::TooFewDocuments {
            documents: documents.len(),
        });
    }
    let docs: Vec<Vec<String>> = documents.iter().map(|d| tokenize(d)).collect();
    for (i, s) in sentences.iter().enumerate() {
        let toks = tokenize(s);
        let best = docs.iter().map(|d| coverage(&toks, d)).fold(0.0, f64::max);
        if best < COVERAGE_THRESHOLD {
            return Some(RejectReason::LowCoverage {
                sentence: i,
                coverage: best,
            });
        }
    }
    None
}

/// Keeps records whose answer passage is well covered by the ranked
/// documents once the passage's own source document is removed.
pub fn filter_qmdsir(records: &[IrRecord]) -> FilterOutcome {
    let results: Vec<Result<Triplet, RejectReason>> = records
        .par_iter()
        .enumerate()
        .map(|(index, r)| {
            if r.answer_source_index >= r.documents.len() {
                return Err(RejectReason::InvalidSourceIndex);
            }
            let (documents, ranks): (Vec<String>, Vec<Option<usize>>) = r
                .documents
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != r.answer_source_index)
                .map(|(i, d)| (d.clone(), Some(i + 1)))
                .unzip();
            if let Some(reason) = check_qmdsir(&r.answer_passage, &documents) {
                return Err(reason);
            }
            let n = documents.len();
            Ok(Triplet {
                query: r.query.clone(),
                documents,
                summary: r.answer_passage.clone(),
                meta: TripletMeta {
                    origins: vec![Origin::Retrieved; n],
                    ranks,
                    source_id: format!("ir-{index}"),
                    doc_sources: Vec::new(),
                },
            })
        })
        .collect();

    let mut out = FilterOutcome::default();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => out.kept.push(t),
            Err(reason) => out.rejected.push(Rejection { index, reason }),
        }
    }
    out
}
