//! First-layer causal attention probabilities.
//!
//! Two paths produce the same numbers:
//!
//! * [`attention_row`] / [`full_matrix`] compute whole probability rows with a
//!   direct softmax. They are the reference and are meant for short chunks.
//! * [`stream_row_stats`] never forms a row. For each query tile it makes two
//!   sweeps over key tiles: the first builds per-head online-softmax
//!   normalizers, the second recomputes probabilities, averages them over
//!   heads and accumulates distant-region mass and squared mass.
//!
//! The head-averaged probability has to exist before it is squared, which is
//! why the squared mass needs the second sweep.
//!
//! Positions are 1-based in the public API (`q`, `p`), matching the row and
//! column numbering of the attention matrix.

mod config;
mod model;
mod softmax;
mod synthetic;
pub mod weights;

use std::sync::Arc;

use rayon::prelude::*;

pub use config::{ModelConfig, RopeScaling};
pub use model::ScoringModel;
pub use softmax::OnlineSoftmax;
pub use synthetic::{synthetic_matrix, SyntheticKind};
pub use weights::{load_weights, LayerWeights, Matrix, TensorData};

use crate::error::{Error, Result};
use model::dot;

#[derive(Debug, Clone)]
pub enum AttentionSource {
    Model(Arc<ScoringModel>),
    Synthetic(SyntheticKind),
}

impl AttentionSource {
    pub fn fingerprint(&self) -> String {
        match self {
            AttentionSource::Model(m) => m.fingerprint().to_string(),
            AttentionSource::Synthetic(kind) => format!("synthetic:{kind}"),
        }
    }
}

impl From<ScoringModel> for AttentionSource {
    fn from(model: ScoringModel) -> Self {
        AttentionSource::Model(Arc::new(model))
    }
}

impl From<SyntheticKind> for AttentionSource {
    fn from(kind: SyntheticKind) -> Self {
        AttentionSource::Synthetic(kind)
    }
}

/// Lower-triangular attention matrix; row `q` holds `M[q][1..=q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalMatrix {
    rows: Vec<Vec<f64>>,
}

impl CausalMatrix {
    /// Fails unless row `i` (0-based) has exactly `i + 1` entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Config(format!(
                    "row {} of a causal matrix must have {} entries, found {}",
                    i + 1,
                    i + 1,
                    row.len()
                )));
            }
        }
        Ok(Self { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row `q`, 1-based.
    pub fn row(&self, q: usize) -> &[f64] {
        &self.rows[q - 1]
    }

    pub fn row_mut(&mut self, q: usize) -> &mut [f64] {
        &mut self.rows[q - 1]
    }

    /// `M[q][p]`, 1-based; zero above the diagonal.
    pub fn get(&self, q: usize, p: usize) -> f64 {
        if p > q {
            0.0
        } else {
            self.rows[q - 1][p - 1]
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

/// Distant-region statistics of one query row: keys `p ≤ q − k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionRowStats {
    /// Query position, 1-based.
    pub row: usize,
    pub distant_mass: f64,
    pub distant_sq_mass: f64,
    pub distant_count: usize,
}

/// Validates `0 < k < len` and `tile ≥ 1`.
pub fn check_distance(len: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("minimum token distance k must be positive".into()));
    }
    if k >= len {
        return Err(Error::Config(format!(
            "minimum token distance k = {k} ≥ chunk length {len}: no token has sufficient context"
        )));
    }
    Ok(())
}

/// Row `q` of the head-averaged attention matrix, `M[q][1..=q]`.
pub fn attention_row(q: usize, tokens: &[u32], source: &AttentionSource) -> Result<Vec<f64>> {
    if q == 0 || q > tokens.len() {
        return Err(Error::Config(format!(
            "query position {q} outside 1..={}",
            tokens.len()
        )));
    }
    match source {
        AttentionSource::Synthetic(kind) => Ok((1..=q).map(|p| kind.entry(q, p)).collect()),
        AttentionSource::Model(model) => {
            let keys = model.keys(&tokens[..q], 0)?;
            let query = model.queries(&tokens[q - 1..q], q - 1)?;
            Ok(model_row(model, &query, &keys, q))
        }
    }
}

/// Direct softmax per head over keys `0..q`, averaged over heads.
fn model_row(model: &ScoringModel, query: &[f32], keys: &[f32], q: usize) -> Vec<f64> {
    let c = model.config();
    let hd = c.head_dim();
    let group = c.group_size();
    let scale = model.logit_scale();
    let mut row = vec![0.0f64; q];
    let mut logits = vec![0.0f32; q];
    for h in 0..c.n_query_heads {
        let qv = &query[h * hd..(h + 1) * hd];
        let g = h / group;
        for (p, l) in logits.iter_mut().enumerate() {
            let kv = &keys[(p * c.n_kv_heads + g) * hd..][..hd];
            *l = dot(qv, kv) * scale;
        }
        let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
        let exps: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (r, e) in row.iter_mut().zip(exps) {
            *r += e / sum;
        }
    }
    let heads = c.n_query_heads as f64;
    row.iter_mut().for_each(|r| *r /= heads);
    row
}

/// The whole `L × L` matrix through [`attention_row`]'s arithmetic.
/// Quadratic in memory; meant for chunks of a few thousand tokens.
pub fn full_matrix(tokens: &[u32], source: &AttentionSource) -> Result<CausalMatrix> {
    match source {
        AttentionSource::Synthetic(kind) => Ok(synthetic_matrix(*kind, tokens.len())),
        AttentionSource::Model(model) => {
            let keys = model.keys(tokens, 0)?;
            let queries = model.queries(tokens, 0)?;
            let width = model.config().n_query_heads * model.config().head_dim();
            let rows = (1..=tokens.len())
                .into_par_iter()
                .map(|q| model_row(model, &queries[(q - 1) * width..q * width], &keys, q))
                .collect();
            Ok(CausalMatrix::from_rows_unchecked(rows))
        }
    }
}

/// Distant-region statistics for every row `q = 1..=L` without forming the
/// attention matrix. Work is split into query tiles of `tile` rows, processed
/// in parallel; each row's sums are accumulated in ascending key order, so
/// the output does not depend on scheduling.
pub fn stream_row_stats(
    tokens: &[u32],
    source: &AttentionSource,
    k: usize,
    tile: usize,
) -> Result<Vec<AttentionRowStats>> {
    let len = tokens.len();
    check_distance(len, k)?;
    if tile == 0 {
        return Err(Error::Config("tile size must be ≥ 1".into()));
    }
    match source {
        AttentionSource::Synthetic(kind) => Ok((1..=len)
            .into_par_iter()
            .map(|q| synthetic_row_stats(*kind, q, k))
            .collect()),
        AttentionSource::Model(model) => {
            let keys = model.keys(tokens, 0)?;
            let starts: Vec<usize> = (0..len).step_by(tile).collect();
            let tiles = starts
                .into_par_iter()
                .map(|qs| model_tile_stats(model, tokens, &keys, qs, (qs + tile).min(len), k, tile))
                .collect::<Result<Vec<_>>>()?;
            Ok(tiles.into_iter().flatten().collect())
        }
    }
}

/// Distant mass and squared mass of row `q` in closed form; every pattern
/// is constant over a contiguous key range.
fn synthetic_row_stats(kind: SyntheticKind, q: usize, k: usize) -> AttentionRowStats {
    let count = q.saturating_sub(k);
    // (number of nonzero distant entries, their common value)
    let (hits, value) = match kind {
        SyntheticKind::Uniform => (count, 1.0 / q as f64),
        SyntheticKind::Sink => ((count >= 1) as usize, 1.0),
        SyntheticKind::Local => {
            let target = if q == 1 { 1 } else { q - 1 };
            ((count >= target) as usize, 1.0)
        }
        SyntheticKind::Banded { width } => {
            let span = width.min(q);
            (count.saturating_sub(q - span), 1.0 / span as f64)
        }
    };
    AttentionRowStats {
        row: q,
        distant_mass: hits as f64 * value,
        distant_sq_mass: hits as f64 * value * value,
        distant_count: count,
    }
}

/// Statistics for query rows `qs..qe` (0-based). Keys come from the
/// precomputed `[position][kv head][head_dim]` cache.
fn model_tile_stats(
    model: &ScoringModel,
    tokens: &[u32],
    keys: &[f32],
    qs: usize,
    qe: usize,
    k: usize,
    tile: usize,
) -> Result<Vec<AttentionRowStats>> {
    let c = model.config();
    let hd = c.head_dim();
    let n_heads = c.n_query_heads;
    let n_kv = c.n_kv_heads;
    let group = c.group_size();
    let scale = model.logit_scale();
    let rows = qe - qs;
    let queries = model.queries(&tokens[qs..qe], qs)?;
    let qvec = |i: usize, h: usize| &queries[(i * n_heads + h) * hd..][..hd];
    let kvec = |p: usize, g: usize| &keys[(p * n_kv + g) * hd..][..hd];

    // Pass 1: per-head normalizers over all causal keys.
    let mut norms = vec![OnlineSoftmax::new(); n_heads * rows];
    let mut logits = vec![0.0f32; tile];
    for ks in (0..qe).step_by(tile) {
        let ke = (ks + tile).min(qe);
        for h in 0..n_heads {
            let g = h / group;
            for i in 0..rows {
                let q_pos = qs + i;
                let end = ke.min(q_pos + 1);
                if end <= ks {
                    continue;
                }
                let block = &mut logits[..end - ks];
                for (l, p) in block.iter_mut().zip(ks..end) {
                    *l = dot(qvec(i, h), kvec(p, g)) * scale;
                }
                norms[h * rows + i].push_block(block);
            }
        }
    }
    for s in &norms {
        if !(s.sum.is_finite() && s.sum > 0.0 && s.max.is_finite()) {
            return Err(Error::Rejected(format!(
                "non-finite attention normalizer in rows {}..{}",
                qs + 1,
                qe
            )));
        }
    }

    // Pass 2: head-averaged probabilities over distant keys p ≤ q − k.
    let mut mass = vec![0.0f64; rows];
    let mut sq = vec![0.0f64; rows];
    if qe > k {
        let key_end = qe - k;
        let mut avg = vec![0.0f64; rows * tile];
        for ks in (0..key_end).step_by(tile) {
            let ke = (ks + tile).min(key_end);
            avg.iter_mut().for_each(|a| *a = 0.0);
            for h in 0..n_heads {
                let g = h / group;
                for i in 0..rows {
                    let q_pos = qs + i;
                    if q_pos < k {
                        continue;
                    }
                    let end = ke.min(q_pos - k + 1);
                    if end <= ks {
                        continue;
                    }
                    let s = &norms[h * rows + i];
                    let out = &mut avg[i * tile..];
                    for (o, p) in out.iter_mut().zip(ks..end) {
                        let l = dot(qvec(i, h), kvec(p, g)) * scale;
                        *o += s.probability(l as f64);
                    }
                }
            }
            for i in 0..rows {
                let q_pos = qs + i;
                if q_pos < k {
                    continue;
                }
                let end = ke.min(q_pos - k + 1);
                for &a in avg[i * tile..].iter().take(end.saturating_sub(ks)) {
                    let a = a / n_heads as f64;
                    mass[i] += a;
                    sq[i] += a * a;
                }
            }
        }
    }

    Ok((0..rows)
        .map(|i| {
            let q = qs + i + 1;
            AttentionRowStats {
                row: q,
                distant_mass: mass[i],
                distant_sq_mass: sq[i],
                distant_count: q.saturating_sub(k),
            }
        })
        .collect())
}
