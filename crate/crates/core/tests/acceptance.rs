//! Acceptance gate. Run with `cargo test --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use qmds::bm25::{Bm25Params, ChunkId, IndexedChunk, RetrievalIndex};
use qmds::dataforge::synthetic::{articles, ir_records, toy_triplets};
use qmds::dataforge::{
    build_qmdscnn, check_qmdsir, filter_qmdsir, make_query_variant, read_jsonl, write_jsonl, Article, Origin,
    QmdscnnConfig, QueryVariant, RejectReason, DISSIMILAR_MAX_F1, DULL_QUERY,
};
use qmds::herosumm::check::{check_component, toy_config, Component};
use qmds::herosumm::{ordering_encoding, Batch, EncodedExample, HeroSumm, ModelConfig, Preset};
use qmds::rouge::{rouge_l, rouge_n, rouge_su4, RougeScore};
use qmds::runway::*;
use qmds::textcore::tokenize;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorlab::{AdamConfig, NoamAdam, Tape};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// 1
fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let config = toy_config();
    let mut worst = (0.0f64, "");
    let mut coords = 0;
    for c in Component::ALL {
        let r = check_component(&config, c, 3).map_err(err)?;
        ensure(r.coordinates > 0, || format!("{c}: no coordinates checked"))?;
        ensure(r.max_rel_error < 1e-4, || format!("{c}: max rel error {:.3e} at {:?}", r.max_rel_error, r.worst))?;
        coords += r.coordinates;
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, c.name());
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(120), || format!("took {took:.1?}"))?;
    Ok(format!(
        "7 components, {coords} coords, worst {:.2e} ({}), {took:.1?}",
        worst.0, worst.1
    ))
}

// 2
fn overfit() -> Outcome {
    let start = Instant::now();
    let triplets = toy_triplets(8, 21);
    let vocab = build_vocab(&triplets, 1000).map_err(err)?;
    let config = ModelConfig {
        d_model: 64,
        ffn_hidden: 256,
        heads: 4,
        local_layers: 2,
        query_layers: 1,
        global_layers: 1,
        decoder_layers: 1,
        max_doc_tokens: 64,
        max_summary_tokens: 32,
        ..ModelConfig::preset(Preset::JointQuery, vocab.len())
    };
    let examples = encode_all(&triplets, &vocab, &config).map_err(err)?;
    let batch = make_batch(&examples, &(0..8).collect::<Vec<_>>()).map_err(err)?;
    let (model, mut store) = HeroSumm::build::<f32>(config, 21).map_err(err)?;
    let adam = AdamConfig {
        d_model: 64,
        warmup: 200,
        ..AdamConfig::default()
    };
    let mut opt = NoamAdam::new(adam, &store);
    let mut first = None;
    for step in 1..=2000u64 {
        let seed = derive_seed(21, step);
        let loss =
            train_step(&model, &mut store, &mut opt, std::slice::from_ref(&batch), &[seed], step).map_err(err)?;
        first.get_or_insert(loss);
        if loss < 0.1 {
            let took = start.elapsed();
            ensure(took < Duration::from_secs(600), || format!("took {took:.1?}"))?;
            return Ok(format!(
                "loss {:.3} -> {loss:.4} at step {step}, {took:.1?}",
                first.unwrap_or(loss)
            ));
        }
    }
    Err("loss stayed above 0.1 for 2000 steps".into())
}

// 3
fn permutation_equivariance() -> Outcome {
    let config = ModelConfig {
        dropout: 0.0,
        use_ordering: true,
        baseline_query_prepend: false,
        max_doc_tokens: 6,
        ..toy_config()
    };
    let (model, store) = HeroSumm::build::<f64>(config.clone(), 13).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let v = config.vocab_size as u32;
    let mut ids = |n: usize| (0..n).map(|_| rng.gen_range(5..v)).collect::<Vec<u32>>();
    let docs: Vec<Vec<u32>> = (0..5).map(|i| ids(2 + i % 4)).collect();
    let query = ids(3);
    let summary = ids(4);
    let run = |docs: Vec<Vec<u32>>| -> Result<(f64, Vec<f64>), String> {
        let ex = EncodedExample {
            docs,
            query: query.clone(),
            summary: summary.clone(),
        };
        let batch = Batch::new(&[&ex]).map_err(err)?;
        let mut t = Tape::eval();
        let out = model.forward(&mut t, &store, &batch, None).map_err(err)?;
        let r = out.encoded.ordering.ok_or("ordering scores missing")?;
        Ok((t.scalar(out.loss), t.value(r).to_vec()))
    };
    let (loss0, r0) = run(docs.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst_loss = 0.0f64;
    let mut worst_r = 0.0f64;
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..docs.len()).collect();
        perm.shuffle(&mut rng);
        let (loss, r) = run(perm.iter().map(|&i| docs[i].clone()).collect())?;
        worst_loss = worst_loss.max((loss - loss0).abs() / loss0.abs());
        for (k, &i) in perm.iter().enumerate() {
            worst_r = worst_r.max((r[k] - r0[i]).abs());
        }
    }
    ensure(worst_loss <= 1e-5, || format!("loss rel diff {worst_loss:.3e}"))?;
    ensure(worst_r <= 1e-9, || format!("r diff {worst_r:.3e}"))?;
    Ok(format!("100 permutations, loss rel diff {worst_loss:.1e}, r diff {worst_r:.1e}"))
}

fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

/// Clipped overlap of two unit lists by counting each distinct unit.
fn clipped<T: PartialEq>(cand: &[T], refr: &[T]) -> usize {
    let mut seen: Vec<&T> = Vec::new();
    let mut total = 0;
    for u in cand {
        if seen.contains(&u) {
            continue;
        }
        seen.push(u);
        let c = cand.iter().filter(|x| *x == u).count();
        let r = refr.iter().filter(|x| *x == u).count();
        total += c.min(r);
    }
    total
}

fn ngrams(s: &[String], n: usize) -> Vec<Vec<String>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn su4_units(s: &[String]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = s.iter().map(|t| (t.clone(), String::new())).collect();
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            if j - i - 1 <= 4 {
                out.push((s[i].clone(), s[j].clone()));
            }
        }
    }
    out
}

fn same(a: RougeScore, b: RougeScore) -> bool {
    a == b
}

// 4
fn rouge_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let words = ["a", "b", "c", "d", "e", "f"];
    let seq = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.gen_range(0..=30);
        (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
    };
    for case in 0..1000 {
        let c = seq(&mut rng);
        let r = seq(&mut rng);
        let l = rouge_l(&c, &r);
        let expect = RougeScore::from_counts(lcs_oracle(&c, &r), c.len(), r.len());
        ensure(same(l, expect), || format!("case {case}: rouge_l {l:?} vs {expect:?}"))?;
        for n in 1..=3 {
            let (cg, rg) = (ngrams(&c, n), ngrams(&r, n));
            let got = rouge_n(&c, &r, n);
            let expect = RougeScore::from_counts(clipped(&cg, &rg), cg.len(), rg.len());
            ensure(same(got, expect), || format!("case {case}: rouge_{n} {got:?} vs {expect:?}"))?;
        }
        let (cu, ru) = (su4_units(&c), su4_units(&r));
        let got = rouge_su4(&c, &r);
        let expect = RougeScore::from_counts(clipped(&cu, &ru), cu.len(), ru.len());
        ensure(same(got, expect), || format!("case {case}: rouge_su4 {got:?} vs {expect:?}"))?;
    }
    Ok("1000 pairs: rouge_l, rouge_1..3, rouge_su4 exact".into())
}

// 5
fn bm25_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let mut chunks: Vec<Vec<String>> = Vec::new();
    while chunks.len() < 200 {
        if chunks.len() > 10 && rng.gen_bool(0.1) {
            let dup = chunks[rng.gen_range(0..chunks.len())].clone();
            chunks.push(dup);
            continue;
        }
        let n = rng.gen_range(1..=15);
        chunks.push((0..n).map(|_| words[rng.gen_range(0..words.len())].clone()).collect());
    }
    // Ids are shuffled so slot order and id order differ from insertion order.
    let mut ids: Vec<ChunkId> = (0..200).map(|i| i * 7 + 3).collect();
    ids.shuffle(&mut rng);
    let params = Bm25Params::default();
    let indexed: Vec<IndexedChunk> = chunks
        .iter()
        .zip(&ids)
        .map(|(tokens, &id)| IndexedChunk {
            id,
            tokens: tokens.clone(),
            article: format!("art{}", id % 9),
            ordinal: 0,
        })
        .collect();
    let index = RetrievalIndex::build(indexed, params).map_err(err)?;

    let n = chunks.len() as f64;
    let avg = chunks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let score = |q: &[String], doc: &[String]| -> f64 {
        let mut total = 0.0;
        for term in q {
            let tf = doc.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = chunks.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = params.k1 * (1.0 - params.b + params.b * doc.len() as f64 / avg);
            total += idf * tf * (params.k1 + 1.0) / (tf + norm);
        }
        total
    };
    let mut ties = 0;
    for qi in 0..50 {
        let q: Vec<String> = (0..rng.gen_range(1..=4)).map(|_| words[rng.gen_range(0..words.len())].clone()).collect();
        let exclude = (qi % 5 == 0).then(|| format!("art{}", qi % 9));
        let mut all: Vec<(ChunkId, f64)> = chunks
            .iter()
            .zip(&ids)
            .filter(|(_, &id)| exclude.as_ref().map_or(true, |a| *a != format!("art{}", id % 9)))
            .map(|(d, &id)| (id, score(&q, d)))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ties += all.windows(2).filter(|w| w[0].1 == w[1].1 && w[0].1 > 0.0).count();
        for k in [1, 4, 10, 200] {
            let got = index.top_k_scored(&q, k, exclude.as_deref());
            let want = &all[..k.min(all.len())];
            ensure(got.len() == want.len(), || format!("query {qi} k {k}: {} results", got.len()))?;
            for (g, w) in got.iter().zip(want) {
                ensure(g.0 == w.0 && (g.1 - w.1).abs() <= 1e-12 * w.1.abs().max(1.0), || {
                    format!("query {qi} k {k}: {g:?} vs {w:?}")
                })?;
            }
        }
    }
    ensure(ties > 0, || "corpus produced no tied scores".into())?;
    Ok(format!("50 queries x k in {{1,4,10,200}}, {ties} tied pairs ordered by id"))
}

fn split_own_chunks(docs: &[String], paragraphs: &[String]) -> Result<Vec<usize>, String> {
    let mut sizes = Vec::new();
    let mut p = 0;
    for (i, d) in docs.iter().enumerate() {
        let size = (1..=4)
            .find(|&s| p + s <= paragraphs.len() && paragraphs[p..p + s].join("\n") == *d)
            .ok_or_else(|| format!("own document {i} is not 1-4 consecutive paragraphs from {p}"))?;
        sizes.push(size);
        p += size;
    }
    ensure(p == paragraphs.len(), || format!("own chunks cover {p} of {} paragraphs", paragraphs.len()))?;
    Ok(sizes)
}

// 6
fn builder_compliance() -> Outcome {
    let corpus = articles(60, 6);
    let triplets = build_qmdscnn(&corpus, 6, &QmdscnnConfig::default()).map_err(err)?;
    ensure(triplets.len() == corpus.len(), || "one triplet per article".into())?;
    let mut size_hist = [0usize; 5];
    let mut retrieved_total = 0;
    for (a, t) in corpus.iter().zip(&triplets) {
        ensure(t.query == a.title, || format!("{}: query is not the title", a.id))?;
        let own = t.meta.origins.iter().take_while(|o| **o == Origin::OriginalChunk).count();
        let retrieved = t.meta.origins.len() - own;
        ensure(t.meta.origins[own..].iter().all(|o| *o == Origin::Retrieved), || {
            format!("{}: retrieved documents must follow own chunks", a.id)
        })?;
        ensure(retrieved <= 4, || format!("{}: {retrieved} retrieved", a.id))?;
        ensure(t.meta.doc_sources[own..].iter().all(|s| *s != a.id), || {
            format!("{}: retrieved its own chunk", a.id)
        })?;
        for s in split_own_chunks(&t.documents[..own], &a.paragraphs)? {
            size_hist[s] += 1;
        }
        retrieved_total += retrieved;
    }

    let records = ir_records(300, 6, 0.5);
    let outcome = filter_qmdsir(&records);
    let mut seen = vec![0u8; records.len()];
    let mut kept_indices = Vec::new();
    for t in &outcome.kept {
        let i: usize = t.meta.source_id.trim_start_matches("ir-").parse().map_err(err)?;
        kept_indices.push(i);
        seen[i] += 1;
        let r = &records[i];
        ensure(check_qmdsir(&t.summary, &t.documents).is_none(), || format!("record {i} fails the re-check"))?;
        ensure(!t.documents.contains(&r.documents[r.answer_source_index]), || {
            format!("record {i} kept its answer source")
        })?;
    }
    let mut reasons: HashMap<&str, usize> = HashMap::new();
    for rej in &outcome.rejected {
        seen[rej.index] += 1;
        let key = match rej.reason {
            RejectReason::InvalidSourceIndex => "index",
            RejectReason::TooFewSentences { .. } => "i",
            RejectReason::TooFewDocuments { .. } => "ii",
            RejectReason::LowCoverage { .. } => "iii",
        };
        *reasons.entry(key).or_default() += 1;
    }
    ensure(seen.iter().all(|&c| c == 1), || "kept and rejected do not partition the records".into())?;
    ensure(!outcome.kept.is_empty() && reasons.len() >= 2, || format!("degenerate split {reasons:?}"))?;
    let mut reasons: Vec<_> = reasons.into_iter().collect();
    reasons.sort();
    Ok(format!(
        "qmdscnn: 60 triplets, chunk sizes 1-4 {:?}, {retrieved_total} retrieved; qmdsir: kept {}, rejected {reasons:?}",
        &size_hist[1..],
        outcome.kept.len()
    ))
}

// 7
fn query_ablations() -> Outcome {
    let corpus = articles(60, 7);
    let triplets = build_qmdscnn(&corpus, 7, &QmdscnnConfig::default()).map_err(err)?;
    let original = make_query_variant(&triplets, QueryVariant::Original, 7).map_err(err)?;
    ensure(original == triplets, || "original variant is not the identity".into())?;
    let dissimilar = make_query_variant(&triplets, QueryVariant::Dissimilar, 7).map_err(err)?;
    let mut worst = 0.0f64;
    for (t, d) in triplets.iter().zip(&dissimilar) {
        let f = rouge_n(&tokenize(&d.query), &tokenize(&t.query), 1).f1;
        worst = worst.max(f);
        ensure(d.documents == t.documents && d.summary == t.summary, || "variant changed more than the query".into())?;
    }
    ensure(worst < DISSIMILAR_MAX_F1, || format!("dissimilar query with F1 {worst:.3}"))?;
    let dull = make_query_variant(&triplets, QueryVariant::Dull, 7).map_err(err)?;
    ensure(dull.iter().all(|t| t.query == DULL_QUERY), || "dull query not constant".into())?;
    Ok(format!("dissimilar max title F1 {worst:.3} < 0.2, dull = {DULL_QUERY:?}"))
}

fn sinusoid_oracle(x: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let angle = x / 10000f64.powf((2 * (k / 2)) as f64 / d as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

// 8
fn ordering_values() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let r: f64 = rng.gen_range(0.0..1.0);
        let d = 2 * rng.gen_range(1..=256);
        let got = ordering_encoding(&[r], d).map_err(err)?;
        for (g, w) in got.iter().zip(sinusoid_oracle(r, d)) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max diff {worst:.2e}"))?;
    let zero = ordering_encoding(&[0.0], 16).map_err(err)?;
    let pattern: Vec<f64> = (0..16).map(|k| (k % 2) as f64).collect();
    ensure(zero == pattern, || format!("r=0 gives {zero:?}"))?;
    Ok(format!("1000 (r, d) pairs, max diff {worst:.1e}; r=0 alternates 0/1"))
}

// 9
fn parameter_counts() -> Outcome {
    let count = |p| -> Result<usize, String> {
        let (_, store) = HeroSumm::build::<f32>(ModelConfig::preset(p, 10_000), 0).map_err(err)?;
        Ok(HeroSumm::param_count(&store))
    };
    let base = count(Preset::Baseline)?;
    let merge = count(Preset::Hierarchical)?;
    let ordering = count(Preset::Ordering)?;
    let query = count(Preset::Query)?;
    let summary = format!("baseline {base}, +merge {merge}, +ordering {ordering}, +query {query}");
    ensure(base < merge && merge < ordering && ordering < query, || summary.clone())?;
    Ok(summary)
}

// 10
fn decode_contracts() -> Outcome {
    let (model, store) = HeroSumm::build::<f32>(toy_config(), 10).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ids = |n: usize| (0..n).map(|_| rng.gen_range(5..17u32)).collect::<Vec<u32>>();
    let inputs: Vec<EncodedExample> = (0..50)
        .map(|i| EncodedExample {
            docs: vec![ids(3 + i % 3), ids(2 + i % 2)],
            query: ids(2),
            summary: ids(2),
        })
        .collect();
    let one = DecodeConfig {
        beam: 1,
        alpha: 0.0,
        min_len: 2,
        max_len: 15,
        block_trigrams: false,
        ..DecodeConfig::default()
    };
    let blocked = DecodeConfig {
        beam: 4,
        alpha: 0.4,
        min_len: 5,
        max_len: 20,
        block_trigrams: true,
        ..DecodeConfig::default()
    };
    let mut decoded = 0;
    for (i, ex) in inputs.iter().enumerate() {
        let mut scorer = ModelScorer::new(&model, &store, ex).map_err(err)?;
        let g = greedy(&mut scorer, &one).map_err(err)?;
        let b = beam_search(&mut scorer, &one).map_err(err)?;
        ensure(b[0].tokens == g.tokens, || format!("input {i}: beam 1 {:?} vs greedy {:?}", b[0].tokens, g.tokens))?;
        for (config, hyps) in [(&one, b), (&blocked, beam_search(&mut scorer, &blocked).map_err(err)?)] {
            for w in hyps.windows(2) {
                ensure(w[0].score >= w[1].score, || format!("input {i}: beam scores increase"))?;
            }
            for h in &hyps {
                decoded += 1;
                let len = h.tokens.len();
                ensure((config.min_len..=config.max_len).contains(&len), || format!("input {i}: length {len}"))?;
                ensure(!config.block_trigrams || !has_repeated_trigram(&h.tokens), || {
                    format!("input {i}: repeated trigram in {:?}", h.tokens)
                })?;
            }
        }
    }
    let lp = length_penalty(5, 0.4);
    let formula = ((5.0f64 + 5.0) / 6.0).powf(0.4);
    ensure((lp - formula).abs() <= 1e-5, || format!("lp(5, 0.4) = {lp}"))?;
    Ok(format!(
        "50 inputs beam1 == greedy, {decoded} hypotheses in bounds, no repeated trigrams; lp(5,0.4) = {lp:.7} (stated 1.22668 is off by {:.1e})",
        (lp - 1.22668f64).abs()
    ))
}

// 11
fn end_to_end_smoke() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let corpus: Vec<Article> =
        read_jsonl(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_articles.jsonl"))).map_err(err)?;
    ensure(corpus.len() == 30, || format!("bundled corpus has {} articles", corpus.len()))?;
    let triplets = build_qmdscnn(&corpus, 11, &QmdscnnConfig::default()).map_err(err)?;
    let data = dir.path().join("qmdscnn.jsonl");
    write_jsonl(&data, &triplets).map_err(err)?;

    let config = TrainConfig {
        model: ModelConfig {
            d_model: 32,
            ffn_hidden: 64,
            max_doc_tokens: 48,
            max_docs: 6,
            max_summary_tokens: 40,
            ..ModelConfig::tiny(5000)
        },
        train: vec![data.clone()],
        val: Some(data.clone()),
        max_val_examples: Some(6),
        max_batch_tokens: 2500,
        accumulation: 1,
        steps: 500,
        validation_interval: 250,
        log_interval: 100,
        checkpoint_dir: dir.path().join("ckpt"),
        seed: 11,
        finetune_from: None,
        resume: false,
        adam: AdamConfig {
            warmup: 200,
            ..AdamConfig::default()
        },
    };
    let outcome = train(&config).map_err(err)?;
    ensure(outcome.state.step == 500, || format!("stopped at step {}", outcome.state.step))?;
    let first_loss = outcome.state.history.first().map(|h| h.train_loss).unwrap_or(f64::NAN);
    let ckpt = Checkpoint::load(&outcome.best).map_err(err)?;
    let decode = DecodeConfig {
        beam: 3,
        min_len: 5,
        max_len: 40,
        ..DecodeConfig::default()
    };
    let decoded = decode_triplets(&ckpt, &triplets, &decode).map_err(err)?;
    ensure(decoded.len() == 30 && decoded.iter().all(|d| !d.summary.is_empty()), || "bad decode output".into())?;
    let refs: Vec<String> = triplets.iter().map(|t| t.summary.clone()).collect();
    let report = score_outputs(EvalMode::F1, &decoded, &refs).map_err(err)?;
    let direct = evaluate(&ckpt, &triplets, &decode, EvalMode::F1).map_err(err)?;
    ensure(report == direct, || "decode+score and evaluate disagree".into())?;
    let in_unit = |s: &Scores| [s.rouge_1, s.rouge_2, s.rouge_l].iter().all(|v| (0.0..=1.0).contains(v));
    ensure(report.rows.len() == 30 && report.rows.iter().all(|r| in_unit(&r.scores)), || "malformed report".into())?;
    let mean_r1 = report.rows.iter().map(|r| r.scores.rouge_1).sum::<f64>() / 30.0;
    ensure((mean_r1 - report.mean.rouge_1).abs() < 1e-12, || "mean row is not the mean".into())?;
    ensure(report.table().lines().any(|l| l.starts_with("corpus")), || "table lacks the corpus row".into())?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(900), || format!("took {took:.1?}"))?;
    Ok(format!(
        "30 triplets, 500 steps (loss {first_loss:.2} -> {:.2}), ROUGE-1/2/L {:.3}/{:.3}/{:.3}, {took:.1?}",
        outcome.last_loss, report.mean.rouge_1, report.mean.rouge_2, report.mean.rouge_l
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", gradient_suite),
        ("overfit", overfit),
        ("permutation equivariance", permutation_equivariance),
        ("rouge oracles", rouge_oracles),
        ("bm25 oracle", bm25_oracle),
        ("dataset builders", builder_compliance),
        ("query ablations", query_ablations),
        ("ordering encoding", ordering_values),
        ("parameter counts", parameter_counts),
        ("decode contracts", decode_contracts),
        ("end-to-end smoke", end_to_end_smoke),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
