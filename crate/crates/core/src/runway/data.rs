use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataforge::{read_jsonl, Triplet};
use crate::herosumm::{Batch, EncodedExample, ModelConfig};
use crate::textcore::{tokenize, Vocabulary};
use crate::{Error, Result};

/// Reads a triplet file, failing on the first structurally invalid line.
pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let triplets: Vec<Triplet> = read_jsonl(path)?;
    for (i, t) in triplets.iter().enumerate() {
        t.validate().map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg: e.to_string(),
        })?;
    }
    Ok(triplets)
}

/// Builds a vocabulary over queries, documents and summaries.
pub fn build_vocab<'a>(triplets: impl IntoIterator<Item = &'a Triplet>, max_size: usize) -> Result<Vocabulary> {
    let mut seqs = Vec::new();
    for t in triplets {
        seqs.push(tokenize(&t.query));
        seqs.extend(t.documents.iter().map(|d| tokenize(d)));
        seqs.push(tokenize(&t.summary));
    }
    Vocabulary::build(seqs.iter().map(Vec::as_slice), max_size)
}

pub fn encode_all(triplets: &[Triplet], vocab: &Vocabulary, config: &ModelConfig) -> Result<Vec<EncodedExample>> {
    triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            EncodedExample::from_triplet(t, vocab, config).map_err(|e| Error::invalid(format!("triplet {i}: {e}")))
        })
        .collect()
}

/// Identifier of a triplet in outputs: its source id, or its position.
pub fn triplet_id(t: &Triplet, index: usize) -> String {
    if t.meta.source_id.is_empty() {
        index.to_string()
    } else {
        t.meta.source_id.clone()
    }
}

/// Groups examples, in order, until adding the next one would exceed
/// `budget` tokens.
pub fn pack(order: &[usize], examples: &[EncodedExample], budget: usize) -> Result<Vec<Vec<usize>>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &i in order {
        let cost = examples[i].cost();
        if cost > budget {
            return Err(Error::invalid(format!(
                "example {i} needs {cost} tokens, over the batch budget of {budget}"
            )));
        }
        if used + cost > budget && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += cost;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

pub fn make_batch(examples: &[EncodedExample], ids: &[usize]) -> Result<Batch> {
    let refs: Vec<&EncodedExample> = ids.iter().map(|&i| &examples[i]).collect();
    Batch::new(&refs)
}

fn mix(seed: u64, n: u64) -> u64 {
    let mut z = seed ^ n.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce5_e9b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `n`-th draw of a stream derived from `seed`.
pub fn derive_seed(seed: u64, n: u64) -> u64 {
    mix(mix(seed, 0x5eed), n)
}

/// Endless sequence of batches. Each epoch reshuffles every source with a
/// seed fixed by the epoch number, interleaves the sources one example at a
/// time and packs the result, so the `k`-th batch depends only on the seed.
pub struct BatchStream {
    examples: Vec<EncodedExample>,
    sources: Vec<Vec<usize>>,
    budget: usize,
    seed: u64,
    epoch: u64,
    batches: Vec<Vec<usize>>,
    pos: usize,
}

impl BatchStream {
    /// `sources` holds one example list per training file.
    pub fn new(sources: Vec<Vec<EncodedExample>>, budget: usize, seed: u64) -> Result<Self> {
        let mut examples = Vec::new();
        let mut ranges = Vec::new();
        for s in sources {
            let start = examples.len();
            examples.extend(s);
            ranges.push((start..examples.len()).collect::<Vec<_>>());
        }
        if examples.is_empty() {
            return Err(Error::invalid("no training examples"));
        }
        let mut stream = BatchStream {
            examples,
            sources: ranges,
            budget,
            seed,
            epoch: 0,
            batches: Vec::new(),
            pos: 0,
        };
        stream.batches = stream.epoch_batches(0)?;
        Ok(stream)
    }

    pub fn examples(&self) -> &[EncodedExample] {
        &self.examples
    }

    fn epoch_batches(&self, epoch: u64) -> Result<Vec<Vec<usize>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch));
        let shuffled: Vec<Vec<usize>> = self
            .sources
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.shuffle(&mut rng);
                s
            })
            .collect();
        let longest = shuffled.iter().map(Vec::len).max().unwrap_or(0);
        let order: Vec<usize> = (0..longest)
            .flat_map(|k| shuffled.iter().filter_map(move |s| s.get(k).copied()))
            .collect();
        pack(&order, &self.examples, self.budget)
    }

    /// Example indices of the next batch.
    pub fn next_ids(&mut self) -> Result<Vec<usize>> {
        if self.pos == self.batches.len() {
            self.epoch += 1;
            self.batches = self.epoch_batches(self.epoch)?;
            self.pos = 0;
        }
        self.pos += 1;
        Ok(self.batches[self.pos - 1].clone())
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let ids = self.next_ids()?;
        make_batch(&self.examples, &ids)
    }

    pub fn skip(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            self.next_ids()?;
        }
        Ok(())
    }
}
