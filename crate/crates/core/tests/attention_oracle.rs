mod common;

use common::*;
use longattn_core::attn::{attention_row, full_matrix, stream_row_stats, AttentionSource};
use longattn_core::depscore::{
    du_t_from_matrix, ds_t_from_matrix, score_chunk_streaming, PopulationMode,
};
use longattn_core::corpus::{Category, TokenChunk};

#[test]
fn row_matches_64_bit_reference() {
    let config = tiny_config(4, 2, 64, 256);
    let model = seeded_model(&config, 42);
    let tokens = random_tokens(16, 256, 1);
    let want = reference_row(&config, model.weights(), &tokens, 7);
    let source = AttentionSource::from(model);
    let got = attention_row(7, &tokens, &source).unwrap();
    assert_eq!(got.len(), 7);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-6, "{g} vs {w}");
    }
}

#[test]
fn every_row_matches_reference_and_sums_to_one() {
    let config = tiny_config(4, 2, 64, 256);
    let model = seeded_model(&config, 9);
    let tokens = random_tokens(32, 256, 2);
    let weights = model.weights().clone();
    let source = AttentionSource::from(model);
    let m = full_matrix(&tokens, &source).unwrap();
    for q in 1..=32 {
        let want = reference_row(&config, &weights, &tokens, q);
        for (g, w) in m.row(q).iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
        assert!((m.row(q).iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn single_head_is_plain_attention() {
    let config = tiny_config(1, 1, 16, 32);
    let model = seeded_model(&config, 3);
    let tokens = random_tokens(20, 32, 3);
    let weights = model.weights().clone();
    let source = AttentionSource::from(model);
    for q in [1, 5, 20] {
        let got = attention_row(q, &tokens, &source).unwrap();
        let want = reference_row(&config, &weights, &tokens, q);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
    }
}

#[test]
fn streaming_matches_matrix_scores_for_all_tilings() {
    for (i, len) in [64usize, 128, 256, 512].into_iter().enumerate() {
        let config = tiny_config(4, 2, 64, 256);
        let source = AttentionSource::from(seeded_model(&config, 100 + i as u64));
        let tokens = random_tokens(len, 256, 200 + i as u64);
        let k = len / 4;
        let m = full_matrix(&tokens, &source).unwrap();
        let ds = ds_t_from_matrix(&m, k).unwrap();
        let du = du_t_from_matrix(&m, k, PopulationMode::ValidOnly).unwrap();
        let chunk = TokenChunk {
            doc_id: "x".into(),
            category: Category::Code,
            chunk_index: 0,
            window_start: 0,
            token_ids: tokens.clone(),
        };
        for tile in [1, 16, 64, len] {
            let s = score_chunk_streaming(&chunk, &source, k, tile, PopulationMode::ValidOnly).unwrap();
            assert!((s.ds_t - ds).abs() < 1e-5, "L={len} tile={tile}");
            assert!(((s.du_t - du) / du).abs() < 1e-4, "L={len} tile={tile}");
        }
    }
}

#[test]
fn streaming_is_bit_stable_for_fixed_tile() {
    let config = tiny_config(4, 2, 64, 256);
    let source = AttentionSource::from(seeded_model(&config, 5));
    let tokens = random_tokens(256, 256, 5);
    let a = stream_row_stats(&tokens, &source, 64, 16).unwrap();
    let b = stream_row_stats(&tokens, &source, 64, 16).unwrap();
    assert_eq!(a, b);
}

#[test]
fn last_row_only_when_k_is_l_minus_one() {
    let config = tiny_config(4, 2, 64, 256);
    let source = AttentionSource::from(seeded_model(&config, 6));
    let tokens = random_tokens(64, 256, 6);
    let m = full_matrix(&tokens, &source).unwrap();
    let chunk = TokenChunk {
        doc_id: "x".into(),
        category: Category::Book,
        chunk_index: 0,
        window_start: 0,
        token_ids: tokens,
    };
    let s = score_chunk_streaming(&chunk, &source, 63, 8, PopulationMode::ValidOnly).unwrap();
    let want = m.get(64, 1) / 64.0;
    assert!((s.ds_t - want).abs() < 1e-12);
    assert_eq!(s.du_t, 0.0);
}

#[test]
fn random_matrix_du_matches_brute_force() {
    for seed in 0..5 {
        let m = random_causal(16, seed);
        for k in [1, 3, 8, 15] {
            let entries = enumerate_distant(&m, k);
            let want = -two_pass_variance(&entries);
            let got = du_t_from_matrix(&m, k, PopulationMode::ValidOnly).unwrap();
            assert!((got - want).abs() < 1e-12, "seed {seed} k {k}");

            let side = 16 - k;
            let mut block = entries.clone();
            block.resize(side * side, 0.0);
            let want_full = -two_pass_variance(&block);
            let got_full = du_t_from_matrix(&m, k, PopulationMode::FullTriangle).unwrap();
            assert!((got_full - want_full).abs() < 1e-12);
        }
    }
}

#[test]
fn streaming_agrees_across_population_modes() {
    let config = tiny_config(4, 2, 64, 256);
    let source = AttentionSource::from(seeded_model(&config, 8));
    let tokens = random_tokens(128, 256, 8);
    let m = full_matrix(&tokens, &source).unwrap();
    let chunk = TokenChunk {
        doc_id: "x".into(),
        category: Category::Book,
        chunk_index: 0,
        window_start: 0,
        token_ids: tokens,
    };
    let mode = PopulationMode::FullTriangle;
    let s = score_chunk_streaming(&chunk, &source, 32, 16, mode).unwrap();
    let du = du_t_from_matrix(&m, 32, mode).unwrap();
    assert!(((s.du_t - du) / du).abs() < 1e-4);
}
