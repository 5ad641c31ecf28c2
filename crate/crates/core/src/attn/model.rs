use std::f64::consts::PI;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::weights::{hex, load_weights, LayerWeights};
use super::{ModelConfig, RopeScaling};
use crate::error::{Error, Result};

/// First decoder layer reduced to what attention probabilities need:
/// embedding lookup, RMS normalization, query/key projections and rotary
/// position encoding.
#[derive(Debug, Clone)]
pub struct ScoringModel {
    config: ModelConfig,
    weights: LayerWeights,
    inv_freq: Vec<f64>,
    scale: f32,
    fingerprint: String,
}

fn inverse_frequencies(config: &ModelConfig) -> Vec<f64> {
    let hd = config.head_dim();
    let base: Vec<f64> = (0..hd / 2)
        .map(|i| config.rope_theta.powf(-((2 * i) as f64) / hd as f64))
        .collect();
    match &config.rope_scaling {
        None => base,
        Some(s) => base.into_iter().map(|f| scale_frequency(f, s)).collect(),
    }
}

fn scale_frequency(freq: f64, s: &RopeScaling) -> f64 {
    let low_wavelen = s.original_max_position_embeddings / s.low_freq_factor;
    let high_wavelen = s.original_max_position_embeddings / s.high_freq_factor;
    let wavelen = 2.0 * PI / freq;
    if wavelen < high_wavelen {
        freq
    } else if wavelen > low_wavelen {
        freq / s.factor
    } else {
        let smooth = (s.original_max_position_embeddings / wavelen - s.low_freq_factor)
            / (s.high_freq_factor - s.low_freq_factor);
        (1.0 - smooth) * freq / s.factor + smooth * freq
    }
}

/// Dot product with eight independent partial sums; the reduction order is
/// fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

impl ScoringModel {
    pub fn new(config: ModelConfig, weights: LayerWeights) -> Result<Self> {
        config.validate()?;
        let hd = config.head_dim();
        let h = config.hidden_dim;
        let checks = [
            ("token_embedding rows", weights.token_embedding.rows, config.vocab_size),
            ("token_embedding cols", weights.token_embedding.cols, h),
            ("attn_norm_gain", weights.attn_norm_gain.len(), h),
            ("w_q", weights.w_q.len(), config.n_query_heads * hd * h),
            ("w_k", weights.w_k.len(), config.n_kv_heads * hd * h),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::Weights(format!("{what}: expected {want}, found {got}")));
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(weights.checksum.as_bytes());
        hasher.update(serde_json::to_vec(&config).expect("config serializes"));
        let fingerprint = format!("model:{}", hex(&hasher.finalize()));
        Ok(Self {
            inv_freq: inverse_frequencies(&config),
            scale: 1.0 / (hd as f32).sqrt(),
            config,
            weights,
            fingerprint,
        })
    }

    pub fn load(weights_path: impl AsRef<Path>, config_path: impl AsRef<Path>) -> Result<Self> {
        let config = ModelConfig::from_file(config_path)?;
        let weights = load_weights(weights_path, &config)?;
        Self::new(config, weights)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &LayerWeights {
        &self.weights
    }

    /// Hash of the weight checksum and configuration.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub(crate) fn logit_scale(&self) -> f32 {
        self.scale
    }

    /// Normalized hidden state: `x / sqrt(mean(x²) + eps) · gain`.
    fn normalized_embedding(&self, token: u32, out: &mut [f32]) -> Result<()> {
        if token as usize >= self.config.vocab_size {
            return Err(Error::Rejected(format!(
                "token id {token} outside model vocabulary of {}",
                self.config.vocab_size
            )));
        }
        self.weights.token_embedding.row_into(token as usize, out);
        let mean_sq = out.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / out.len() as f64;
        let inv = 1.0 / (mean_sq + self.config.norm_eps).sqrt();
        for (x, g) in out.iter_mut().zip(&self.weights.attn_norm_gain) {
            *x = (*x as f64 * inv) as f32 * g;
        }
        Ok(())
    }

    fn rotate(&self, v: &mut [f32], position: usize) {
        let half = v.len() / 2;
        for (i, &f) in self.inv_freq.iter().enumerate() {
            let (sin, cos) = (position as f64 * f).sin_cos();
            let (x1, x2) = (v[i] as f64, v[i + half] as f64);
            v[i] = (x1 * cos - x2 * sin) as f32;
            v[i + half] = (x2 * cos + x1 * sin) as f32;
        }
    }

    fn project(&self, tokens: &[u32], start: usize, w: &[f32], heads: usize) -> Result<Vec<f32>> {
        let hd = self.config.head_dim();
        let hidden = self.config.hidden_dim;
        let width = heads * hd;
        let mut out = vec![0.0f32; tokens.len() * width];
        let mut x = vec![0.0f32; hidden];
        for (i, &t) in tokens.iter().enumerate() {
            self.normalized_embedding(t, &mut x)?;
            let row = &mut out[i * width..(i + 1) * width];
            for (j, o) in row.iter_mut().enumerate() {
                *o = dot(&w[j * hidden..(j + 1) * hidden], &x);
            }
            for head in row.chunks_exact_mut(hd) {
                self.rotate(head, start + i);
            }
        }
        Ok(out)
    }

    /// Rotated queries for `tokens` placed at positions `start..`, laid out
    /// `[position][query head][head_dim]`.
    pub fn queries(&self, tokens: &[u32], start: usize) -> Result<Vec<f32>> {
        self.project(tokens, start, &self.weights.w_q, self.config.n_query_heads)
    }

    /// Rotated keys, laid out `[position][kv head][head_dim]`.
    pub fn keys(&self, tokens: &[u32], start: usize) -> Result<Vec<f32>> {
        self.project(tokens, start, &self.weights.w_k, self.config.n_kv_heads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n_q: usize, n_kv: usize) -> ModelConfig {
        ModelConfig {
            hidden_dim: 16 * n_q,
            n_query_heads: n_q,
            n_kv_heads: n_kv,
            head_dim: None,
            rope_theta: 10000.0,
            norm_eps: 1e-5,
            vocab_size: 32,
            rope_scaling: None,
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.25 - 2.0).collect();
        let b: Vec<f32> = (0..19).map(|i| 1.0 - i as f32 * 0.125).collect();
        let naive: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-5);
    }

    #[test]
    fn rotation_preserves_norm_and_is_identity_at_zero() {
        let c = config(2, 1);
        let m = ScoringModel::new(c.clone(), LayerWeights::seeded_random(&c, 1)).unwrap();
        let v: Vec<f32> = (0..16).map(|i| (i as f32).sin()).collect();
        let mut at0 = v.clone();
        m.rotate(&mut at0, 0);
        assert_eq!(at0, v);
        let mut at9 = v.clone();
        m.rotate(&mut at9, 9);
        let n = |x: &[f32]| x.iter().map(|a| a * a).sum::<f32>();
        assert!((n(&at9) - n(&v)).abs() < 1e-4);
        assert_ne!(at9, v);
    }

    #[test]
    fn llama3_scaling_keeps_high_frequencies() {
        let s = RopeScaling {
            factor: 8.0,
            low_freq_factor: 1.0,
            high_freq_factor: 4.0,
            original_max_position_embeddings: 8192.0,
        };
        assert_eq!(scale_frequency(1.0, &s), 1.0);
        let low = 2.0 * PI / 20000.0;
        assert!((scale_frequency(low, &s) - low / 8.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let c = config(2, 2);
        let m = ScoringModel::new(c.clone(), LayerWeights::seeded_random(&c, 1)).unwrap();
        assert!(matches!(m.keys(&[1, 32], 0), Err(Error::Rejected(_))));
    }

    #[test]
    fn fingerprint_tracks_weights() {
        let c = config(2, 1);
        let a = ScoringModel::new(c.clone(), LayerWeights::seeded_random(&c, 1)).unwrap();
        let b = ScoringModel::new(c.clone(), LayerWeights::seeded_random(&c, 2)).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert!(a.fingerprint().starts_with("model:"));
    }
}
