use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::dataforge::Triplet;
use crate::textcore::{tokenize, Vocabulary, BOS, EOS, PAD, SEP};
use crate::{Error, Result};

/// A triplet as token ids, truncated to the model's limits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub docs: Vec<Vec<u32>>,
    pub query: Vec<u32>,
    /// Reference summary without start or end markers.
    pub summary: Vec<u32>,
}

impl EncodedExample {
    pub fn from_triplet(triplet: &Triplet, vocab: &Vocabulary, config: &ModelConfig) -> Result<Self> {
        let mut query = vocab.encode(&tokenize(&triplet.query));
        query.truncate(config.max_query_tokens);
        let mut docs: Vec<Vec<u32>> = triplet
            .documents
            .iter()
            .map(|d| vocab.encode(&tokenize(d)))
            .filter(|d| !d.is_empty())
            .take(config.max_docs)
            .collect();
        if docs.is_empty() {
            return Err(Error::invalid("triplet has no non-empty documents"));
        }
        if config.baseline_query_prepend {
            let mut first = query.clone();
            first.push(SEP);
            first.append(&mut docs[0]);
            docs[0] = first;
        }
        for d in &mut docs {
            d.truncate(config.max_doc_tokens);
        }
        if config.use_query_encoder && query.is_empty() {
            return Err(Error::invalid(format!("empty query {:?}", triplet.query)));
        }
        let mut summary = vocab.encode(&tokenize(&triplet.summary));
        summary.truncate(config.max_summary_tokens.saturating_sub(1));
        Ok(EncodedExample { docs, query, summary })
    }

    /// Document and summary tokens, the unit of the batching budget.
    pub fn cost(&self) -> usize {
        self.docs.iter().map(Vec::len).sum::<usize>() + self.summary.len() + 1
    }
}

/// Padded examples. Documents are `[E, N, T]`, queries `[E, Tq]` and
/// decoder sequences `[E, S]`, all row-major.
#[derive(Clone, Debug)]
pub struct Batch {
    pub examples: usize,
    pub docs: usize,
    pub doc_len: usize,
    pub tokens: Vec<usize>,
    pub token_keep: Vec<bool>,
    pub doc_keep: Vec<bool>,
    pub query_len: usize,
    pub query: Vec<usize>,
    pub query_keep: Vec<bool>,
    pub target_len: usize,
    pub decoder_input: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(examples: &[&EncodedExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let e = examples.len();
        let n = examples.iter().map(|x| x.docs.len()).max().unwrap_or(0);
        let t = examples.iter().flat_map(|x| x.docs.iter().map(Vec::len)).max().unwrap_or(0);
        let tq = examples.iter().map(|x| x.query.len()).max().unwrap_or(0).max(1);
        let s = examples.iter().map(|x| x.summary.len() + 1).max().unwrap_or(1);
        if n == 0 || t == 0 {
            return Err(Error::invalid("batch has no document tokens"));
        }

        let mut b = Batch {
            examples: e,
            docs: n,
            doc_len: t,
            tokens: vec![PAD as usize; e * n * t],
            token_keep: vec![false; e * n * t],
            doc_keep: vec![false; e * n],
            query_len: tq,
            query: vec![PAD as usize; e * tq],
            query_keep: vec![false; e * tq],
            target_len: s,
            decoder_input: vec![PAD as usize; e * s],
            targets: vec![None; e * s],
        };
        for (ei, x) in examples.iter().enumerate() {
            for (i, doc) in x.docs.iter().enumerate() {
                if doc.is_empty() {
                    return Err(Error::invalid(format!("example {ei} document {i} is empty")));
                }
                b.doc_keep[ei * n + i] = true;
                for (j, &tok) in doc.iter().enumerate() {
                    let at = (ei * n + i) * t + j;
                    b.tokens[at] = tok as usize;
                    b.token_keep[at] = true;
                }
            }
            for (k, &tok) in x.query.iter().enumerate() {
                b.query[ei * tq + k] = tok as usize;
                b.query_keep[ei * tq + k] = true;
            }
            let mut input = vec![BOS];
            input.extend_from_slice(&x.summary);
            let mut target = x.summary.clone();
            target.push(EOS);
            for (p, (&i, &o)) in input.iter().zip(&target).enumerate() {
                b.decoder_input[ei * s + p] = i as usize;
                b.targets[ei * s + p] = Some(o as usize);
            }
        }
        Ok(b)
    }

    pub fn target_tokens(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// Whether position `p` of example `e`'s decoder input is a real token.
    pub fn decoder_keep(&self) -> Vec<bool> {
        self.targets.iter().map(Option::is_some).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::herosumm::ModelConfig;

    fn vocab() -> Vocabulary {
        let corpus: Vec<Vec<String>> = vec![tokenize("a b c d e f query words summary text")];
        Vocabulary::build(corpus.iter().map(|v| v.as_slice()), 100).unwrap()
    }

    fn triplet() -> Triplet {
        Triplet {
            query: "query words".into(),
            documents: vec!["a b c d e f".into(), "b c".into()],
            summary: "summary text".into(),
            meta: Default::default(),
        }
    }

    #[test]
    fn truncation_and_prepend() {
        let v = vocab();
        let mut config = ModelConfig::tiny(v.len());
        config.max_doc_tokens = 4;
        config.max_docs = 1;
        let x = EncodedExample::from_triplet(&triplet(), &v, &config).unwrap();
        assert_eq!(x.docs.len(), 1);
        assert_eq!(x.docs[0].len(), 4);
        config.baseline_query_prepend = true;
        let x = EncodedExample::from_triplet(&triplet(), &v, &config).unwrap();
        assert_eq!(x.docs[0][..3], [v.token_to_id("query"), v.token_to_id("words"), SEP]);
    }

    #[test]
    fn empty_query_is_rejected_with_query_encoder() {
        let v = vocab();
        let config = ModelConfig::tiny(v.len());
        let mut t = triplet();
        t.query = "   ".into();
        assert!(EncodedExample::from_triplet(&t, &v, &config).is_err());
    }

    #[test]
    fn padding_layout() {
        let a = EncodedExample {
            docs: vec![vec![7, 8, 9], vec![10]],
            query: vec![5],
            summary: vec![11, 12],
        };
        let b = EncodedExample {
            docs: vec![vec![6]],
            query: vec![5, 6],
            summary: vec![],
        };
        let batch = Batch::new(&[&a, &b]).unwrap();
        assert_eq!((batch.examples, batch.docs, batch.doc_len, batch.query_len, batch.target_len), (2, 2, 3, 2, 3));
        assert_eq!(batch.doc_keep, vec![true, true, true, false]);
        assert_eq!(&batch.token_keep[3..6], &[true, false, false]);
        assert_eq!(&batch.decoder_input[..3], &[BOS as usize, 11, 12]);
        assert_eq!(&batch.targets[..3], &[Some(11), Some(12), Some(EOS as usize)]);
        assert_eq!(&batch.targets[3..], &[Some(EOS as usize), None, None]);
        assert_eq!(batch.target_tokens(), 4);
    }
}
