//! Dependency strength (`ds_t`) and distribution uniformity (`du_t`) of a chunk.
//!
//! With `M[q][p]` the mass query `q` places on key `p ≤ q`, the distant region
//! of a chunk of length `L` is `{(q, p) : q > k, p ≤ q − k}`, which holds
//! `(L − k)(L − k + 1) / 2` entries. Then
//!
//! * `ds_t = (1/L) · Σ` over the distant region (rows `q ≤ k` add nothing), and
//! * `du_t = −Var` of the distant-region entries (population variance).
//!
//! Under [`PopulationMode::FullTriangle`] the variance also counts the
//! structural zeros of the `(L − k) × (L − k)` block that contains the region.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attn::{check_distance, stream_row_stats, AttentionRowStats, AttentionSource, CausalMatrix};
use crate::corpus::{Category, TokenChunk};
use crate::error::{Error, Result};

/// Largest tolerated `|row sum − 1|` before a chunk is rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopulationMode {
    /// Only the causal distant entries.
    #[default]
    ValidOnly,
    /// The square block including its structural zeros.
    FullTriangle,
}

impl PopulationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PopulationMode::ValidOnly => "valid-only",
            PopulationMode::FullTriangle => "full-triangle",
        }
    }

    /// Number of values the variance is taken over.
    pub fn population(self, len: usize, k: usize) -> u64 {
        match self {
            PopulationMode::ValidOnly => m_t_entry_count(len, k),
            PopulationMode::FullTriangle => ((len - k) as u64).pow(2),
        }
    }
}

impl FromStr for PopulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid-only" | "valid_only" => Ok(PopulationMode::ValidOnly),
            "full-triangle" | "full_triangle" => Ok(PopulationMode::FullTriangle),
            _ => Err(Error::Config(format!(
                "unknown population mode {s:?} (expected valid-only or full-triangle)"
            ))),
        }
    }
}

/// Raw scores of one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkScore {
    pub doc_id: String,
    pub chunk_index: u32,
    pub category: Category,
    #[serde(rename = "L")]
    pub window: usize,
    pub k: usize,
    pub ds_t: f64,
    pub du_t: f64,
    pub population_mode: PopulationMode,
    pub source_fingerprint: String,
}

/// Entries in the distant region: `(L − k)(L − k + 1) / 2`.
pub fn m_t_entry_count(len: usize, k: usize) -> u64 {
    let d = (len - k) as u64;
    d * (d + 1) / 2
}

fn check_matrix(m: &CausalMatrix, k: usize) -> Result<()> {
    check_distance(m.len(), k)?;
    for (i, row) in m.rows().iter().enumerate() {
        if let Some(bad) = row.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Rejected(format!(
                "row {} holds invalid probability {bad}",
                i + 1
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Rejected(format!(
                "row {} sums to {sum:.9}, not 1 within {ROW_SUM_TOLERANCE}",
                i + 1
            )));
        }
    }
    Ok(())
}

fn distant(m: &CausalMatrix, k: usize) -> impl Iterator<Item = f64> + '_ {
    (k + 1..=m.len()).flat_map(move |q| m.row(q)[..q - k].iter().copied())
}

pub fn ds_t_from_matrix(m: &CausalMatrix, k: usize) -> Result<f64> {
    check_matrix(m, k)?;
    let total: f64 = (k + 1..=m.len())
        .map(|q| m.row(q)[..q - k].iter().sum::<f64>())
        .sum();
    Ok(total / m.len() as f64)
}

pub fn du_t_from_matrix(m: &CausalMatrix, k: usize, mode: PopulationMode) -> Result<f64> {
    check_matrix(m, k)?;
    let len = m.len();
    let n = mode.population(len, k) as f64;
    let zeros = n - m_t_entry_count(len, k) as f64;
    let mean = distant(m, k).sum::<f64>() / n;
    let dev: f64 = distant(m, k).map(|x| (x - mean) * (x - mean)).sum::<f64>() + zeros * mean * mean;
    Ok(-(dev / n))
}

/// `ds_t` and `du_t` from per-row distant statistics of a chunk of length `len`.
pub fn scores_from_row_stats(
    stats: &[AttentionRowStats],
    len: usize,
    k: usize,
    mode: PopulationMode,
) -> Result<(f64, f64)> {
    check_distance(len, k)?;
    let (mut mass, mut sq) = (0.0f64, 0.0f64);
    for s in stats {
        let ok = s.distant_mass.is_finite()
            && s.distant_sq_mass.is_finite()
            && s.distant_mass >= -1e-12
            && s.distant_mass <= 1.0 + ROW_SUM_TOLERANCE
            && s.distant_sq_mass <= s.distant_mass + 1e-12;
        if !ok {
            return Err(Error::Rejected(format!(
                "row {} has distant mass {} and squared mass {}",
                s.row, s.distant_mass, s.distant_sq_mass
            )));
        }
        mass += s.distant_mass;
        sq += s.distant_sq_mass;
    }
    let n = mode.population(len, k) as f64;
    let mean = mass / n;
    let variance = (sq / n - mean * mean).max(0.0);
    Ok((mass / len as f64, -variance))
}

/// Scores one chunk through the tiled streaming path.
pub fn score_chunk_streaming(
    chunk: &TokenChunk,
    source: &AttentionSource,
    k: usize,
    tile: usize,
    mode: PopulationMode,
) -> Result<ChunkScore> {
    let len = chunk.token_ids.len();
    let stats = stream_row_stats(&chunk.token_ids, source, k, tile)?;
    let (ds_t, du_t) = scores_from_row_stats(&stats, len, k, mode)
        .map_err(|e| Error::Rejected(format!("{}#{}: {e}", chunk.doc_id, chunk.chunk_index)))?;
    Ok(ChunkScore {
        doc_id: chunk.doc_id.clone(),
        chunk_index: chunk.chunk_index,
        category: chunk.category,
        window: len,
        k,
        ds_t,
        du_t,
        population_mode: mode,
        source_fingerprint: source.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attn::{synthetic_matrix, SyntheticKind};

    #[test]
    fn entry_counts() {
        assert_eq!(m_t_entry_count(10, 2), 36);
        assert_eq!(m_t_entry_count(5, 4), 1);
        assert_eq!(m_t_entry_count(32768, 8192), 24576 * 24577 / 2);
        assert_eq!(m_t_entry_count(32768, 8192), 302_002_176);
    }

    #[test]
    fn uniform_ds() {
        let m = synthetic_matrix(SyntheticKind::Uniform, 8);
        let want = (1.0 / 3.0 + 2.0 / 4.0 + 3.0 / 5.0 + 4.0 / 6.0 + 5.0 / 7.0 + 6.0 / 8.0) / 8.0;
        let ds = ds_t_from_matrix(&m, 2).unwrap();
        assert!((ds - want).abs() < 1e-15);
        assert!((ds - 499.0 / 1120.0).abs() < 1e-15);
    }

    #[test]
    fn local_and_sink_ds() {
        assert_eq!(ds_t_from_matrix(&synthetic_matrix(SyntheticKind::Local, 20), 2).unwrap(), 0.0);
        assert_eq!(ds_t_from_matrix(&synthetic_matrix(SyntheticKind::Sink, 20), 5).unwrap(), 0.75);
    }

    #[test]
    fn sink_du_valid_only() {
        let m = synthetic_matrix(SyntheticKind::Sink, 10);
        let du = du_t_from_matrix(&m, 2, PopulationMode::ValidOnly).unwrap();
        assert!((du + 14.0 / 81.0).abs() < 1e-15, "{du}");
    }

    #[test]
    fn constant_region_has_zero_du() {
        // Every distant entry is 0.1; the rest of each row is spread over the
        // k nearest keys.
        let (len, k, c) = (6, 2, 0.1);
        let rows = (1..=len)
            .map(|q: usize| {
                let far = q.saturating_sub(k);
                let near = q - far;
                let rest = (1.0 - c * far as f64) / near as f64;
                (1..=q).map(|p| if p <= far { c } else { rest }).collect()
            })
            .collect();
        let m = CausalMatrix::from_rows(rows).unwrap();
        assert_eq!(m_t_entry_count(len, k), 10);
        let du = du_t_from_matrix(&m, k, PopulationMode::ValidOnly).unwrap();
        assert!(du.abs() < 1e-18, "{du}");
    }

    #[test]
    fn population_modes_diverge_with_structural_zeros() {
        let m = synthetic_matrix(SyntheticKind::Uniform, 12);
        let valid = du_t_from_matrix(&m, 3, PopulationMode::ValidOnly).unwrap();
        let full = du_t_from_matrix(&m, 3, PopulationMode::FullTriangle).unwrap();
        assert!((valid - full).abs() > 1e-6);
        let valid = du_t_from_matrix(&m, 11, PopulationMode::ValidOnly).unwrap();
        let full = du_t_from_matrix(&m, 11, PopulationMode::FullTriangle).unwrap();
        assert_eq!(valid, full);
    }

    #[test]
    fn denormalized_row_is_rejected() {
        let mut m = synthetic_matrix(SyntheticKind::Uniform, 16);
        m.row_mut(9)[0] += 1e-2;
        let err = ds_t_from_matrix(&m, 4).unwrap_err();
        assert!(matches!(err, Error::Rejected(_)), "{err}");
        assert!(err.to_string().contains("row 9"));
        assert!(matches!(
            du_t_from_matrix(&m, 4, PopulationMode::ValidOnly),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn streaming_sink_chunk() {
        let chunk = TokenChunk {
            doc_id: "s".into(),
            category: Category::Book,
            chunk_index: 0,
            window_start: 0,
            token_ids: vec![0; 256],
        };
        let s = score_chunk_streaming(&chunk, &SyntheticKind::Sink.into(), 64, 16, PopulationMode::ValidOnly)
            .unwrap();
        assert_eq!(s.ds_t, 0.75);
        let mu = 2.0 / 193.0;
        assert!((s.du_t + (mu - mu * mu)).abs() < 1e-15);
        assert_eq!(s.source_fingerprint, "synthetic:sink");
        assert_eq!((s.window, s.k), (256, 64));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("full-triangle".parse::<PopulationMode>().unwrap(), PopulationMode::FullTriangle);
        assert!("both".parse::<PopulationMode>().is_err());
    }
}
