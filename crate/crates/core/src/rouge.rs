//! ROUGE-N, ROUGE-L and ROUGE-SU4 over token sequences.
//!
//! No stemming and no stopword removal. Multi-sentence texts are scored as
//! one flat token sequence.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Score from a match count over candidate and reference unit totals.
    /// Either total being zero yields all zeros.
    pub fn from_counts(matched: usize, candidate_total: usize, reference_total: usize) -> Self {
        if candidate_total == 0 || reference_total == 0 {
            return RougeScore::default();
        }
        let precision = matched as f64 / candidate_total as f64;
        let recall = matched as f64 / reference_total as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore { precision, recall, f1 }
    }
}

fn counts<K: Hash + Eq>(items: impl Iterator<Item = K>) -> (HashMap<K, usize>, usize) {
    let mut map = HashMap::new();
    let mut total = 0;
    for k in items {
        *map.entry(k).or_insert(0) += 1;
        total += 1;
    }
    (map, total)
}

fn clipped_overlap<K: Hash + Eq>(a: &HashMap<K, usize>, b: &HashMap<K, usize>) -> usize {
    a.iter().map(|(k, &n)| n.min(b.get(k).copied().unwrap_or(0))).sum()
}

fn gram_key<T: AsRef<str>>(w: &[T]) -> Vec<&str> {
    w.iter().map(|t| t.as_ref()).collect()
}

/// Clipped n-gram overlap. `n = 0` scores as zero.
pub fn rouge_n<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    if n == 0 {
        return RougeScore::default();
    }
    let (c, ct) = counts(candidate.windows(n).map(gram_key));
    let (r, rt) = counts(reference.windows(n).map(gram_key));
    RougeScore::from_counts(clipped_overlap(&c, &r), ct, rt)
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Largest number of tokens allowed between the two words of a skip-bigram.
pub const SU4_MAX_GAP: usize = 4;

#[derive(Hash, PartialEq, Eq)]
enum Unit<'a> {
    Uni(&'a str),
    Skip(&'a str, &'a str),
}

fn su4_units<T: AsRef<str>>(seq: &[T]) -> impl Iterator<Item = Unit<'_>> {
    let unigrams = seq.iter().map(|t| Unit::Uni(t.as_ref()));
    let skips = (0..seq.len()).flat_map(move |i| {
        let end = (i + SU4_MAX_GAP + 2).min(seq.len());
        (i + 1..end).map(move |j| Unit::Skip(seq[i].as_ref(), seq[j].as_ref()))
    });
    unigrams.chain(skips)
}

/// Skip-bigrams with at most four intervening tokens, pooled with unigrams.
pub fn rouge_su4<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> RougeScore {
    let (c, ct) = counts(su4_units(candidate));
    let (r, rt) = counts(su4_units(reference));
    RougeScore::from_counts(clipped_overlap(&c, &r), ct, rt)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RecallSet {
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
    pub rouge_su4: f64,
}

/// Recalls of the first `word_limit` candidate tokens against the full
/// reference.
pub fn rouge_recall_truncated<T: AsRef<str>>(candidate: &[T], reference: &[T], word_limit: usize) -> RecallSet {
    let cand = &candidate[..candidate.len().min(word_limit)];
    RecallSet {
        rouge_1: rouge_n(cand, reference, 1).recall,
        rouge_2: rouge_n(cand, reference, 2).recall,
        rouge_l: rouge_l(cand, reference).recall,
        rouge_su4: rouge_su4(cand, reference).recall,
    }
}
