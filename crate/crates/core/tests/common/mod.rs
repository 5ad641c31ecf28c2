#![allow(dead_code)]

use longattn_core::attn::{CausalMatrix, LayerWeights, ModelConfig, ScoringModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(n_q: usize, n_kv: usize, hidden: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: hidden,
        n_query_heads: n_q,
        n_kv_heads: n_kv,
        head_dim: None,
        rope_theta: 10000.0,
        norm_eps: 1e-5,
        vocab_size: vocab,
        rope_scaling: None,
    }
}

pub fn seeded_model(config: &ModelConfig, seed: u64) -> ScoringModel {
    ScoringModel::new(config.clone(), LayerWeights::seeded_random(config, seed)).unwrap()
}

pub fn random_tokens(len: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
}

/// Random row-stochastic causal matrix with strictly positive entries.
pub fn random_causal(len: usize, seed: u64) -> CausalMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (1..=len)
        .map(|q| {
            let raw: Vec<f64> = (0..q).map(|_| rng.random_range(0.01..1.0f64).powi(3)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    CausalMatrix::from_rows(rows).unwrap()
}

/// Straightforward 64-bit recomputation of head-averaged first-layer
/// attention row `q` (1-based): RMS norm, projections, rotary encoding with
/// the `(i, i + d/2)` pairing, per-head softmax, mean over heads.
pub fn reference_row(config: &ModelConfig, w: &LayerWeights, tokens: &[u32], q: usize) -> Vec<f64> {
    let hidden = config.hidden_dim;
    let hd = hidden / config.n_query_heads;
    let emb = w.token_embedding.to_f32();
    let hidden_state = |t: u32| -> Vec<f64> {
        let x: Vec<f64> = emb[t as usize * hidden..(t as usize + 1) * hidden]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let ms = x.iter().map(|v| v * v).sum::<f64>() / hidden as f64;
        let r = (ms + config.norm_eps).sqrt();
        x.iter()
            .zip(&w.attn_norm_gain)
            .map(|(v, &g)| v / r * g as f64)
            .collect()
    };
    let project = |mat: &[f32], x: &[f64], out_dim: usize| -> Vec<f64> {
        (0..out_dim)
            .map(|j| (0..hidden).map(|i| mat[j * hidden + i] as f64 * x[i]).sum())
            .collect()
    };
    let rope = |v: &mut [f64], pos: usize| {
        let half = hd / 2;
        for i in 0..half {
            let theta = pos as f64 / config.rope_theta.powf(2.0 * i as f64 / hd as f64);
            let (a, b) = (v[i], v[i + half]);
            v[i] = a * theta.cos() - b * theta.sin();
            v[i + half] = b * theta.cos() + a * theta.sin();
        }
    };
    let query = {
        let mut v = project(&w.w_q, &hidden_state(tokens[q - 1]), config.n_query_heads * hd);
        for h in 0..config.n_query_heads {
            rope(&mut v[h * hd..(h + 1) * hd], q - 1);
        }
        v
    };
    let keys: Vec<Vec<f64>> = (0..q)
        .map(|p| {
            let mut v = project(&w.w_k, &hidden_state(tokens[p]), config.n_kv_heads * hd);
            for g in 0..config.n_kv_heads {
                rope(&mut v[g * hd..(g + 1) * hd], p);
            }
            v
        })
        .collect();
    let group = config.n_query_heads / config.n_kv_heads;
    let mut row = vec![0.0; q];
    for h in 0..config.n_query_heads {
        let g = h / group;
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| {
                (0..hd)
                    .map(|i| query[h * hd + i] * k[g * hd + i])
                    .sum::<f64>()
                    / (hd as f64).sqrt()
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for (r, l) in row.iter_mut().zip(&logits) {
            *r += (l - m).exp() / z / config.n_query_heads as f64;
        }
    }
    row
}

/// Distant-region entries `{M[q][p] : q > k, p ≤ q − k}` listed one by one.
pub fn enumerate_distant(m: &CausalMatrix, k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for q in k + 1..=m.len() {
        for p in 1..=q - k {
            out.push(m.get(q, p));
        }
    }
    out
}

pub fn two_pass_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}
