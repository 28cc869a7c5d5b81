use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::{Origin, Triplet};
use crate::rouge::rouge_l;
use crate::textcore::{split_sentences, tokenize};
use crate::{Error, Result};

/// Assigns every summary sentence to the original-chunk document with the
/// highest ROUGE-L F1 (lowest index on ties), returning document indices.
/// Retrieved documents are ignored.
pub fn sentence_alignment(triplet: &Triplet) -> Result<Vec<usize>> {
    let originals: Vec<(usize, Vec<String>)> = triplet
        .documents
        .iter()
        .enumerate()
        .filter(|&(i, _)| triplet.meta.origins.get(i) == Some(&Origin::OriginalChunk))
        .map(|(i, d)| (i, tokenize(d)))
        .collect();
    if originals.is_empty() {
        return Err(Error::invalid(format!(
            "triplet {:?} has no original-chunk documents",
            triplet.meta.source_id
        )));
    }
    let assigned = split_sentences(&triplet.summary)
        .iter()
        .map(|sentence| {
            let toks = tokenize(sentence);
            let mut best = (originals[0].0, f64::NEG_INFINITY);
            for (i, doc) in &originals {
                let f = rouge_l(&toks, doc).f1;
                if f > best.1 {
                    best = (*i, f);
                }
            }
            best.0
        })
        .collect();
    Ok(assigned)
}

/// Number of distinct original documents the summary sentences align to.
pub fn summary_span(triplet: &Triplet) -> Result<usize> {
    Ok(sentence_alignment(triplet)?.into_iter().collect::<BTreeSet<_>>().len())
}

/// Histogram from span count to the number of triplets with that span.
pub fn alignment_histogram(triplets: &[Triplet]) -> Result<BTreeMap<usize, usize>> {
    if triplets.is_empty() {
        return Err(Error::invalid("alignment histogram of an empty triplet list"));
    }
    let spans: Vec<usize> = triplets.par_iter().map(summary_span).collect::<Result<_>>()?;
    let mut hist = BTreeMap::new();
    for s in spans {
        *hist.entry(s).or_insert(0) += 1;
    }
    Ok(hist)
}
