use std::collections::BTreeMap;

use longattn_core::attn::SyntheticKind;
use longattn_core::corpus::{Category, TokenChunk};
use longattn_core::depscore::{score_chunk_streaming, ChunkScore, PopulationMode};
use longattn_core::selector::{select, Budget, ScoreTable, Standardization};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn score(doc: &str, idx: u32, category: Category, ds: f64, du: f64) -> ChunkScore {
    ChunkScore {
        doc_id: doc.into(),
        chunk_index: idx,
        category,
        window: 64,
        k: 16,
        ds_t: ds,
        du_t: du,
        population_mode: PopulationMode::ValidOnly,
        source_fingerprint: "test".into(),
    }
}

fn scores_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec((0.0f64..1.0, -0.1f64..0.0), 3..30)
}

fn order(table: &ScoreTable) -> Vec<(String, u32)> {
    let mut recs: Vec<_> = table.records.iter().collect();
    recs.sort_by(|a, b| {
        b.lds_t
            .total_cmp(&a.lds_t)
            .then_with(|| a.score.doc_id.cmp(&b.score.doc_id))
    });
    recs.iter().map(|r| (r.score.doc_id.clone(), r.score.chunk_index)).collect()
}

proptest! {
    #[test]
    fn affine_rescaling_leaves_lds_unchanged(
        raw in scores_strategy(),
        a in 0.1f64..10.0, b in -5.0f64..5.0, c in 0.1f64..10.0, d in -5.0f64..5.0,
    ) {
        let base: Vec<_> = raw.iter().enumerate()
            .map(|(i, &(ds, du))| score(&format!("d{i:03}"), 0, Category::Book, ds, du)).collect();
        let moved: Vec<_> = raw.iter().enumerate()
            .map(|(i, &(ds, du))| score(&format!("d{i:03}"), 0, Category::Book, a * ds + b, c * du + d)).collect();
        let t1 = ScoreTable::new(base, 0.5, Standardization::PerCategory).unwrap();
        let t2 = ScoreTable::new(moved, 0.5, Standardization::PerCategory).unwrap();
        for (x, y) in t1.records.iter().zip(&t2.records) {
            prop_assert!((x.lds_t - y.lds_t).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_alpha_ranks_by_ds(raw in scores_strategy()) {
        let scores: Vec<_> = raw.iter().enumerate()
            .map(|(i, &(ds, du))| score(&format!("d{i:03}"), 0, Category::Code, ds, du)).collect();
        let table = ScoreTable::new(scores.clone(), 0.0, Standardization::PerCategory).unwrap();
        let manifest = select(&table, &BTreeMap::from([(Category::Code, Budget::Fraction(1.0))])).unwrap();
        let mut want = scores.clone();
        want.sort_by(|a, b| b.ds_t.total_cmp(&a.ds_t).then_with(|| a.doc_id.cmp(&b.doc_id)));
        let got: Vec<_> = manifest.selected.iter().map(|s| s.doc_id.clone()).collect();
        let want: Vec<_> = want.iter().map(|s| s.doc_id.clone()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn categories_standardize_independently(book in scores_strategy(), code in scores_strategy(), shift in 0.0f64..3.0) {
        let make = |code_shift: f64| -> Vec<ChunkScore> {
            book.iter().enumerate()
                .map(|(i, &(ds, du))| score(&format!("b{i:03}"), 0, Category::Book, ds, du))
                .chain(code.iter().enumerate().map(|(i, &(ds, du))| {
                    score(&format!("c{i:03}"), 0, Category::Code, ds * code_shift + 1.0, du)
                }))
                .collect()
        };
        let t1 = ScoreTable::new(make(1.0), 0.5, Standardization::PerCategory).unwrap();
        let t2 = ScoreTable::new(make(1.0 + shift), 0.5, Standardization::PerCategory).unwrap();
        let budgets = BTreeMap::from([(Category::Book, Budget::Chunks(2)), (Category::Code, Budget::Chunks(2))]);
        let books = |t: &ScoreTable| -> Vec<_> {
            select(t, &budgets).unwrap().selected.into_iter().filter(|s| s.category == Category::Book).collect()
        };
        prop_assert_eq!(books(&t1), books(&t2));
        let o1: Vec<_> = order(&t1).into_iter().filter(|(d, _)| d.starts_with('b')).collect();
        let o2: Vec<_> = order(&t2).into_iter().filter(|(d, _)| d.starts_with('b')).collect();
        prop_assert_eq!(o1, o2);
    }
}

#[test]
fn sink_chunks_beat_local_chunks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut scores = Vec::new();
    for (kind, prefix) in [(SyntheticKind::Sink, "sink"), (SyntheticKind::Local, "local")] {
        for i in 0..10 {
            let chunk = TokenChunk {
                doc_id: format!("{prefix}{i:02}"),
                category: Category::Book,
                chunk_index: 0,
                window_start: 0,
                token_ids: vec![0; 64],
            };
            let mut s = score_chunk_streaming(&chunk, &kind.into(), 16, 16, PopulationMode::ValidOnly).unwrap();
            s.ds_t += rng.random_range(-1e-6..1e-6);
            s.du_t += rng.random_range(-1e-6..1e-6);
            scores.push(s);
        }
    }
    let table = ScoreTable::new(scores, 0.5, Standardization::PerCategory).unwrap();
    let manifest = select(&table, &BTreeMap::from([(Category::Book, Budget::Chunks(10))])).unwrap();
    assert_eq!(manifest.selected.len(), 10);
    assert!(manifest.selected.iter().all(|s| s.doc_id.starts_with("sink")));
}

#[test]
fn budget_overshoot_is_at_most_one_chunk() {
    let scores: Vec<_> = (0..10)
        .map(|i| score(&format!("d{i}"), 0, Category::Arxiv, i as f64 / 10.0, -(i as f64) / 100.0))
        .collect();
    let table = ScoreTable::new(scores, 0.5, Standardization::PerCategory).unwrap();
    for budget in [1u64, 63, 64, 65, 200, 640] {
        let m = select(&table, &BTreeMap::from([(Category::Arxiv, Budget::Tokens(budget))])).unwrap();
        let c = &m.categories[&Category::Arxiv];
        assert!(c.selected_tokens >= budget.min(640));
        assert!(c.overshoot_tokens < 64);
        assert!(c.warning.is_none());
    }
    let m = select(&table, &BTreeMap::from([(Category::Arxiv, Budget::Tokens(10_000))])).unwrap();
    let c = &m.categories[&Category::Arxiv];
    assert_eq!(c.selected_chunks, 10);
    assert!(c.warning.is_some());
}
