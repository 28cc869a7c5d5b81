//! Seeded generators for synthetic corpora in the crate's input formats.
//!
//! Words are pronounceable nonsense built from syllables. Articles share a
//! small pool of topics so titles retrieve related chunks from other
//! articles, and summaries reuse article sentences so alignment and
//! coverage are meaningful.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Article, IrRecord, Triplet};

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
const COMMON: [&str; 16] = [
    "the", "a", "of", "to", "in", "and", "on", "for", "with", "was", "is", "by", "at", "from", "after", "over",
];

fn word(rng: &mut impl Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), NUCLEI.choose(rng).unwrap()))
        .collect()
}

fn lexicon(rng: &mut impl Rng, n: usize) -> Vec<String> {
    let mut words: Vec<String> = Vec::with_capacity(n);
    while words.len() < n {
        let w = word(rng);
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Topics {
    words: Vec<Vec<String>>,
    shared: Vec<String>,
    rare: Vec<String>,
}

impl Topics {
    fn new(rng: &mut impl Rng, topics: usize, per_topic: usize) -> Self {
        let t = topics * per_topic;
        let pool = lexicon(rng, t + 70);
        Topics {
            words: pool[..t].chunks(per_topic).map(<[String]>::to_vec).collect(),
            shared: pool[t..t + 40].to_vec(),
            rare: pool[t + 40..].to_vec(),
        }
    }

    fn pick<'a>(&'a self, rng: &mut impl Rng, topic: usize) -> &'a str {
        let r: f64 = rng.gen();
        if r < 0.45 {
            self.words[topic].choose(rng).unwrap()
        } else if r < 0.7 {
            self.shared.choose(rng).unwrap()
        } else {
            COMMON.choose(rng).unwrap()
        }
    }

    fn sentence(&self, rng: &mut impl Rng, topic: usize, len: std::ops::RangeInclusive<usize>) -> String {
        let n = rng.gen_range(len);
        let words: Vec<&str> = (0..n).map(|_| self.pick(rng, topic)).collect();
        format!("{}.", capitalize(&words.join(" ")))
    }

    fn title(&self, rng: &mut impl Rng, topic: usize) -> String {
        let n = rng.gen_range(3..=6);
        let words: Vec<&str> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    self.words[topic].choose(rng).unwrap().as_str()
                } else {
                    self.pick(rng, topic)
                }
            })
            .collect();
        capitalize(&words.join(" "))
    }
}

/// `n` news-style articles over `max(2, n / 5)` topics.
pub fn articles(n: usize, seed: u64) -> Vec<Article> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_topics = (n / 5).max(2);
    let topics = Topics::new(&mut rng, n_topics, 12);
    (0..n)
        .map(|i| {
            let topic = rng.gen_range(0..n_topics);
            let paragraphs: Vec<Vec<String>> = (0..rng.gen_range(3..=9))
                .map(|_| {
                    (0..rng.gen_range(1..=3))
                        .map(|_| topics.sentence(&mut rng, topic, 6..=14))
                        .collect()
                })
                .collect();
            let mut pool: Vec<&String> = paragraphs.iter().flatten().collect();
            pool.shuffle(&mut rng);
            let summary = pool.iter().take(rng.gen_range(2..=3)).map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
            Article {
                id: format!("syn-{i:04}"),
                title: topics.title(&mut rng, topic),
                paragraphs: paragraphs.into_iter().map(|p| p.join(" ")).collect(),
                summary,
            }
        })
        .collect()
}

/// Search-log style records. Roughly `keep_rate` of them satisfy all three
/// filter criteria; the rest fail one of them.
pub fn ir_records(n: usize, seed: u64, keep_rate: f64) -> Vec<IrRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_topics = (n / 5).max(2);
    let topics = Topics::new(&mut rng, n_topics, 12);
    (0..n)
        .map(|_| {
            let topic = rng.gen_range(0..n_topics);
            let query = {
                let k = rng.gen_range(2..=5);
                (0..k).map(|_| topics.words[topic].choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
            };
            let keep = rng.gen_bool(keep_rate.clamp(0.0, 1.0));
            let flaw = if keep { 0 } else { rng.gen_range(1..=3) };
            let n_docs = if flaw == 2 { rng.gen_range(1..=3) } else { rng.gen_range(4..=7) };
            let n_sent = if flaw == 1 { 1 } else { rng.gen_range(2..=3) };
            let answer: Vec<String> = (0..n_sent)
                .map(|_| {
                    if flaw == 3 {
                        let words: Vec<&str> = (0..6).map(|_| topics.rare.choose(&mut rng).unwrap().as_str()).collect();
                        format!("{}.", capitalize(&words.join(" ")))
                    } else {
                        topics.sentence(&mut rng, topic, 5..=10)
                    }
                })
                .collect();

            let mut documents: Vec<String> = (0..n_docs)
                .map(|_| {
                    (0..rng.gen_range(2..=5))
                        .map(|_| topics.sentence(&mut rng, topic, 6..=14))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let source = rng.gen_range(0..n_docs);
            documents[source] = format!("{} {}", documents[source], answer.join(" "));
            if flaw != 3 && n_docs > 1 {
                // Another document repeats every answer sentence.
                let other = (source + 1 + rng.gen_range(0..n_docs - 1)) % n_docs;
                documents[other] = format!("{} {}", answer.join(" "), documents[other]);
            }
            IrRecord {
                query,
                answer_passage: answer.join(" "),
                documents,
                answer_source_index: source,
            }
        })
        .collect()
}

/// Small triplets whose summaries are mostly copied from their documents,
/// for overfitting and smoke runs. Vocabulary stays below 200 words.
pub fn toy_triplets(n: usize, seed: u64) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = Topics::new(&mut rng, 4, 20);
    (0..n)
        .map(|i| {
            let topic = i % 4;
            let documents: Vec<String> = (0..rng.gen_range(2..=3))
                .map(|_| topics.sentence(&mut rng, topic, 5..=9))
                .collect();
            let first: Vec<&str> = documents[0].trim_end_matches('.').split(' ').collect();
            let take = first.len().min(rng.gen_range(3..=5));
            let summary = format!("{}.", first[..take].join(" "));
            Triplet {
                query: topics.title(&mut rng, topic),
                documents,
                summary,
                meta: Default::default(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataforge::{build_qmdscnn, filter_qmdsir, QmdscnnConfig};
    use crate::textcore::tokenize;
    use std::collections::HashSet;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(articles(10, 4), articles(10, 4));
        assert_ne!(articles(10, 4), articles(10, 5));
        assert_eq!(ir_records(10, 4, 0.5), ir_records(10, 4, 0.5));
        assert_eq!(toy_triplets(8, 1), toy_triplets(8, 1));
    }

    #[test]
    fn articles_feed_the_builder() {
        let corpus = articles(30, 7);
        let triplets = build_qmdscnn(&corpus, 7, &QmdscnnConfig::default()).unwrap();
        let retrieved: usize = triplets.iter().map(|t| t.documents.len()).sum::<usize>()
            - triplets.iter().map(|t| t.meta.ranks.iter().filter(|r| r.is_none()).count()).sum::<usize>();
        assert!(retrieved > 30 * 3, "only {retrieved} retrieved chunks");
    }

    #[test]
    fn keep_rate_controls_filtering() {
        let all = filter_qmdsir(&ir_records(40, 3, 1.0));
        assert_eq!(all.kept.len(), 40);
        let none = filter_qmdsir(&ir_records(40, 3, 0.0));
        assert!(none.kept.is_empty());
    }

    #[test]
    fn toy_vocabulary_is_small() {
        let ts = toy_triplets(8, 0);
        let mut vocab = HashSet::new();
        for t in &ts {
            for text in t.documents.iter().chain([&t.query, &t.summary]) {
                vocab.extend(tokenize(text));
            }
        }
        assert!(vocab.len() < 200);
    }
}
