use proptest::prelude::*;
use qmds::dataforge::synthetic::{articles, ir_records};
use qmds::dataforge::{
    alignment_histogram, build_qmdscnn, check_qmdsir, filter_qmdsir, make_query_variant, read_jsonl, triplet_stats,
    write_jsonl, Origin, QmdscnnConfig, QueryVariant, Triplet,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn qmdscnn_is_deterministic_and_ordered(n in 3usize..25, seed in any::<u64>(), k in 0usize..6) {
        let corpus = articles(n, seed % 1000);
        let config = QmdscnnConfig { k_retrieved: k, ..QmdscnnConfig::default() };
        let a = build_qmdscnn(&corpus, seed, &config).unwrap();
        prop_assert_eq!(&a, &build_qmdscnn(&corpus, seed, &config).unwrap());
        for (art, t) in corpus.iter().zip(&a) {
            prop_assert_eq!(&t.meta.source_id, &art.id);
            let own = t.meta.origins.iter().filter(|o| **o == Origin::OriginalChunk).count();
            prop_assert!(own >= 1 && t.documents.len() - own <= k);
            let joined = t.documents[..own].join("\n");
            prop_assert_eq!(joined, art.paragraphs.join("\n"));
            let ranks: Vec<usize> = t.meta.ranks.iter().flatten().copied().collect();
            prop_assert_eq!(ranks, (1..=t.documents.len() - own).collect::<Vec<_>>());
        }
    }

    #[test]
    fn qmdsir_output_rechecks_clean(n in 1usize..60, seed in any::<u64>(), keep in 0.0f64..1.0) {
        let records = ir_records(n, seed % 1000, keep);
        let out = filter_qmdsir(&records);
        prop_assert_eq!(out.kept.len() + out.rejected.len(), n);
        for t in &out.kept {
            prop_assert!(check_qmdsir(&t.summary, &t.documents).is_none());
        }
        for r in &out.rejected {
            let rec = &records[r.index];
            if rec.answer_source_index < rec.documents.len() {
                let rest: Vec<String> = rec.documents.iter().enumerate()
                    .filter(|&(i, _)| i != rec.answer_source_index)
                    .map(|(_, d)| d.clone())
                    .collect();
                prop_assert_eq!(check_qmdsir(&rec.answer_passage, &rest), Some(r.reason.clone()));
            }
        }
    }
}

#[test]
fn variants_touch_only_the_query() {
    let triplets = build_qmdscnn(&articles(20, 3), 3, &QmdscnnConfig::default()).unwrap();
    for v in [QueryVariant::Distractor, QueryVariant::Dull, QueryVariant::Dissimilar] {
        let out = make_query_variant(&triplets, v, 0).unwrap();
        assert_eq!(out.len(), triplets.len());
        for (a, b) in triplets.iter().zip(&out) {
            assert_eq!((&a.documents, &a.summary, &a.meta), (&b.documents, &b.summary, &b.meta), "{v}");
        }
        if v == QueryVariant::Distractor {
            assert!(triplets.iter().zip(&out).all(|(a, b)| a.query != b.query || a.query.is_empty()));
        }
    }
    assert!(make_query_variant(&triplets[..1], QueryVariant::Distractor, 0).is_err());
}

#[test]
fn jsonl_round_trip_and_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let triplets = build_qmdscnn(&articles(12, 9), 9, &QmdscnnConfig::default()).unwrap();
    write_jsonl(&path, &triplets).unwrap();
    let back: Vec<Triplet> = read_jsonl(&path).unwrap();
    assert_eq!(back, triplets);

    let stats = triplet_stats(&triplets).unwrap();
    assert_eq!(stats.samples, 12);
    let docs: usize = triplets.iter().map(|t| t.documents.len()).sum();
    assert_eq!(stats.documents, docs);
    assert!((stats.mean_documents - docs as f64 / 12.0).abs() < 1e-12);

    let hist = alignment_histogram(&triplets).unwrap();
    let sentences: usize = hist.values().sum();
    assert!(sentences >= 12, "{hist:?}");

    std::fs::write(&path, "{\"query\": 1}\n").unwrap();
    let e = read_jsonl::<Triplet>(&path).unwrap_err().to_string();
    assert!(e.contains(":1:"), "{e}");
}
