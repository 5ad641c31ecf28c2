//! Standardization, ranking and budgeted selection of scored chunks.
//!
//! Raw `ds_t` and `du_t` live on very different scales, so each is z-scored
//! (within a category by default) before they are combined as
//! `lds_t = z(ds_t) + alpha · z(du_t)`. Every category is then ranked by
//! `lds_t` and filled up to its own token budget.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Category;
use crate::depscore::ChunkScore;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const HISTOGRAM_BINS: usize = 64;
/// Range of raw `ds_t` reported for 32k-token chunks scored by a large
/// production model; used only as a reference band in reports.
pub const REFERENCE_DS_BAND: (f64, f64) = (0.18, 0.59);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    #[default]
    PerCategory,
    Global,
}

impl FromStr for Standardization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-category" | "per_category" => Ok(Standardization::PerCategory),
            "global" => Ok(Standardization::Global),
            _ => Err(Error::Config(format!(
                "unknown standardization {s:?} (expected per-category or global)"
            ))),
        }
    }
}

/// Z-scores with population standard deviation.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    let (mean, std) = mean_std(values)?;
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Selection(format!(
            "z-score needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !std.is_finite() || std <= 1e-12 * mean.abs() {
        return Err(Error::Selection(
            "zero variance: all values identical, z-score undefined".into(),
        ));
    }
    Ok((mean, std))
}

pub fn combine(std_ds: f64, std_du: f64, alpha: f64) -> f64 {
    std_ds + alpha * std_du
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub ds_t: Moments,
    pub du_t: Moments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub score: ChunkScore,
    pub std_ds: f64,
    pub std_du: f64,
    pub lds_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub records: Vec<ScoredRecord>,
    /// Keyed by category name, or `"all"` under global standardization.
    pub stats: BTreeMap<String, GroupStats>,
    pub alpha: f64,
    pub standardization: Standardization,
}

impl ScoreTable {
    pub fn new(scores: Vec<ChunkScore>, alpha: f64, standardization: Standardization) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be ≥ 0, got {alpha}")));
        }
        if scores.is_empty() {
            return Err(Error::Selection("no score records".into()));
        }
        let group_of = |s: &ChunkScore| match standardization {
            Standardization::PerCategory => s.category.as_str().to_string(),
            Standardization::Global => "all".to_string(),
        };
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in scores.iter().enumerate() {
            groups.entry(group_of(s)).or_default().push(i);
        }
        let mut std_ds = vec![0.0; scores.len()];
        let mut std_du = vec![0.0; scores.len()];
        let mut stats = BTreeMap::new();
        for (name, idx) in &groups {
            let named = |what: &str, e: Error| {
                Error::Selection(format!("category {name}, {what}: {}", strip(e)))
            };
            let ds: Vec<f64> = idx.iter().map(|&i| scores[i].ds_t).collect();
            let du: Vec<f64> = idx.iter().map(|&i| scores[i].du_t).collect();
            let (ds_mean, ds_std) = mean_std(&ds).map_err(|e| named("ds_t", e))?;
            let (du_mean, du_std) = mean_std(&du).map_err(|e| named("du_t", e))?;
            for &i in idx {
                std_ds[i] = (scores[i].ds_t - ds_mean) / ds_std;
                std_du[i] = (scores[i].du_t - du_mean) / du_std;
            }
            stats.insert(
                name.clone(),
                GroupStats {
                    count: idx.len(),
                    ds_t: Moments { mean: ds_mean, std: ds_std },
                    du_t: Moments { mean: du_mean, std: du_std },
                },
            );
        }
        let records = scores
            .into_iter()
            .enumerate()
            .map(|(i, score)| ScoredRecord {
                score,
                std_ds: std_ds[i],
                std_du: std_du[i],
                lds_t: combine(std_ds[i], std_du[i], alpha),
            })
            .collect();
        Ok(Self {
            records,
            stats,
            alpha,
            standardization,
        })
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Selection(m) => m,
        other => other.to_string(),
    }
}

/// Per-category budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Tokens(u64),
    Chunks(u64),
    /// Share of the category's available tokens, in `[0, 1]`.
    Fraction(f64),
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        match self {
            Budget::Fraction(f) if !(0.0..=1.0).contains(f) => Err(Error::Config(format!(
                "budget fraction {f} outside [0, 1]"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Tokens(n) => write!(f, "tokens:{n}"),
            Budget::Chunks(n) => write!(f, "chunks:{n}"),
            Budget::Fraction(x) => write!(f, "fraction:{x}"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    /// `tokens:N`, `chunks:N` or `fraction:F`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad budget {s:?} (expected tokens:N, chunks:N or fraction:F)"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let budget = match kind.trim() {
            "tokens" => Budget::Tokens(value.trim().parse().map_err(|_| bad())?),
            "chunks" => Budget::Chunks(value.trim().parse().map_err(|_| bad())?),
            "fraction" => Budget::Fraction(value.trim().parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        budget.validate()?;
        Ok(budget)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedChunk {
    pub doc_id: String,
    pub chunk_index: u32,
    pub category: Category,
    pub lds_t: f64,
    /// 1-based rank within the category.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySelection {
    pub budget: Budget,
    pub budget_tokens: u64,
    pub available_chunks: usize,
    pub available_tokens: u64,
    pub selected_chunks: usize,
    pub selected_tokens: u64,
    /// Tokens selected beyond the budget; at most one chunk's worth.
    pub overshoot_tokens: u64,
    /// `lds_t` of the last selected chunk.
    pub threshold: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub selected: Vec<SelectedChunk>,
    pub categories: BTreeMap<Category, CategorySelection>,
    pub alpha: f64,
    pub standardization: Standardization,
}

/// Descending `lds_t`; ties by ascending `(doc_id, chunk_index)`.
fn rank_order(a: &ScoredRecord, b: &ScoredRecord) -> Ordering {
    b.lds_t
        .total_cmp(&a.lds_t)
        .then_with(|| a.score.doc_id.cmp(&b.score.doc_id))
        .then_with(|| a.score.chunk_index.cmp(&b.score.chunk_index))
}

pub fn select(table: &ScoreTable, budgets: &BTreeMap<Category, Budget>) -> Result<SelectionManifest> {
    let mut by_category: BTreeMap<Category, Vec<&ScoredRecord>> = BTreeMap::new();
    for r in &table.records {
        if !budgets.contains_key(&r.score.category) {
            return Err(Error::Selection(format!(
                "unknown category {}: no budget configured",
                r.score.category
            )));
        }
        by_category.entry(r.score.category).or_default().push(r);
    }
    for b in budgets.values() {
        b.validate()?;
    }

    let mut selected = Vec::new();
    let mut categories = BTreeMap::new();
    for (&category, &budget) in budgets {
        let mut records = by_category.remove(&category).unwrap_or_default();
        records.sort_by(|a, b| rank_order(a, b));
        let available_tokens: u64 = records.iter().map(|r| r.score.window as u64).sum();
        let budget_tokens = match budget {
            Budget::Tokens(n) => n,
            Budget::Chunks(n) => n * records.first().map_or(0, |r| r.score.window as u64),
            Budget::Fraction(f) => (f * available_tokens as f64).ceil() as u64,
        };
        let warning = (budget_tokens > available_tokens).then(|| {
            let w = format!(
                "category {category}: budget of {budget_tokens} tokens exceeds the {available_tokens} available; selecting all"
            );
            log::warn!("{w}");
            w
        });
        let mut taken = 0u64;
        let mut count = 0usize;
        let mut threshold = None;
        for r in &records {
            if taken >= budget_tokens {
                break;
            }
            taken += r.score.window as u64;
            count += 1;
            threshold = Some(r.lds_t);
            selected.push(SelectedChunk {
                doc_id: r.score.doc_id.clone(),
                chunk_index: r.score.chunk_index,
                category,
                lds_t: r.lds_t,
                rank: count,
            });
        }
        categories.insert(
            category,
            CategorySelection {
                budget,
                budget_tokens,
                available_chunks: records.len(),
                available_tokens,
                selected_chunks: count,
                selected_tokens: taken,
                overshoot_tokens: taken.saturating_sub(budget_tokens),
                threshold,
                warning,
            },
        );
    }
    Ok(SelectionManifest {
        selected,
        categories,
        alpha: table.alpha,
        standardization: table.standardization,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBand {
    pub lo: f64,
    pub hi: f64,
    /// Share of chunks whose raw `ds_t` lies inside `[lo, hi]`.
    pub fraction_inside: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub count: usize,
    pub ds_t: Summary,
    pub du_t: Summary,
    pub ds_reference_band: ReferenceBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub categories: BTreeMap<Category, CategoryReport>,
}

fn summarize(values: &[f64]) -> Summary {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let width = max - min;
    for &v in values {
        let bin = if width > 0.0 {
            (((v - min) / width) * HISTOGRAM_BINS as f64) as usize
        } else {
            0
        };
        counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Summary {
        min,
        max,
        mean,
        histogram: Histogram { lo: min, hi: max, counts },
    }
}

/// Per-category min/max/mean and 64-bin histograms of raw scores.
pub fn stats_report(scores: &[ChunkScore]) -> Result<StatsReport> {
    if scores.is_empty() {
        return Err(Error::Selection("stats report needs at least one score record".into()));
    }
    let mut groups: BTreeMap<Category, Vec<&ChunkScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.category).or_default().push(s);
    }
    let categories = groups
        .into_iter()
        .map(|(cat, group)| {
            let ds: Vec<f64> = group.iter().map(|s| s.ds_t).collect();
            let du: Vec<f64> = group.iter().map(|s| s.du_t).collect();
            let (lo, hi) = REFERENCE_DS_BAND;
            let inside = ds.iter().filter(|&&v| (lo..=hi).contains(&v)).count();
            let report = CategoryReport {
                count: group.len(),
                ds_reference_band: ReferenceBand {
                    lo,
                    hi,
                    fraction_inside: inside as f64 / ds.len() as f64,
                },
                ds_t: summarize(&ds),
                du_t: summarize(&du),
            };
            (cat, report)
        })
        .collect();
    Ok(StatsReport { categories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depscore::PopulationMode;

    fn score(doc: &str, idx: u32, cat: Category, ds: f64, du: f64) -> ChunkScore {
        ChunkScore {
            doc_id: doc.into(),
            chunk_index: idx,
            category: cat,
            window: 8,
            k: 2,
            ds_t: ds,
            du_t: du,
            population_mode: PopulationMode::ValidOnly,
            source_fingerprint: "test".into(),
        }
    }

    #[test]
    fn zscore_of_one_two_three() {
        let z = zscore(&[1.0, 2.0, 3.0]).unwrap();
        let r = (1.5f64).sqrt();
        assert!((z[0] + r).abs() < 1e-15 && z[1] == 0.0 && (z[2] - r).abs() < 1e-15);
    }

    #[test]
    fn zscore_errors() {
        assert!(zscore(&[5.0, 5.0]).is_err());
        assert!(zscore(&[1.0]).is_err());
        assert!(zscore(&[0.1; 7]).is_err());
    }

    #[test]
    fn zscore_is_affine_invariant() {
        let v = [0.3, -1.2, 4.0, 2.5];
        let w: Vec<f64> = v.iter().map(|x| 3.0 * x - 7.0).collect();
        for (a, b) in zscore(&v).unwrap().iter().zip(zscore(&w).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_arithmetic() {
        assert_eq!(combine(1.0, -2.0, 0.5), 0.0);
        assert_eq!(combine(0.7, 3.0, 0.0), 0.7);
        assert_eq!(combine(0.0, 0.0, 2.0), 0.0);
    }

    #[test]
    fn zero_variance_names_category() {
        let scores = vec![
            score("a", 0, Category::Code, 0.5, -1.0),
            score("b", 0, Category::Code, 0.5, -2.0),
        ];
        let msg = ScoreTable::new(scores, 0.5, Standardization::PerCategory)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("category code") && msg.contains("ds_t"), "{msg}");
    }

    fn manifest_for(lds: &[f64], budget: Budget) -> SelectionManifest {
        // alpha = 0 and ds_t equal to the desired lds (already standardized
        // up to an affine map) keeps the order.
        let scores = lds
            .iter()
            .enumerate()
            .map(|(i, &v)| score(&format!("d{i}"), 0, Category::Book, v, -(i as f64)))
            .collect();
        let table = ScoreTable::new(scores, 0.0, Standardization::PerCategory).unwrap();
        select(&table, &BTreeMap::from([(Category::Book, budget)])).unwrap()
    }

    #[test]
    fn top_half_by_fraction() {
        let m = manifest_for(&[2.0, 1.0, 0.0, -1.0], Budget::Fraction(0.5));
        let ids: Vec<_> = m.selected.iter().map(|s| s.doc_id.as_str()).collect();
        assert_eq!(ids, ["d0", "d1"]);
        let c = &m.categories[&Category::Book];
        assert_eq!((c.budget_tokens, c.selected_tokens, c.overshoot_tokens), (16, 16, 0));
        assert_eq!(m.selected[1].rank, 2);
    }

    #[test]
    fn overshoot_is_at_most_one_chunk() {
        let m = manifest_for(&[2.0, 1.0, 0.0, -1.0], Budget::Tokens(9));
        let c = &m.categories[&Category::Book];
        assert_eq!((c.selected_chunks, c.overshoot_tokens), (2, 7));
    }

    #[test]
    fn over_budget_selects_all_with_warning() {
        let m = manifest_for(&[2.0, 1.0, 0.0], Budget::Chunks(10));
        assert_eq!(m.selected.len(), 3);
        assert!(m.categories[&Category::Book].warning.is_some());
    }

    #[test]
    fn ties_break_by_doc_then_index() {
        let scores = vec![
            score("b", 1, Category::Book, 1.0, -1.0),
            score("b", 0, Category::Book, 1.0, -1.0),
            score("a", 3, Category::Book, 1.0, -1.0),
            score("z", 0, Category::Book, 0.0, -2.0),
        ];
        let table = ScoreTable::new(scores, 0.5, Standardization::PerCategory).unwrap();
        let m = select(&table, &BTreeMap::from([(Category::Book, Budget::Chunks(3))])).unwrap();
        let refs: Vec<_> = m.selected.iter().map(|s| (s.doc_id.as_str(), s.chunk_index)).collect();
        assert_eq!(refs, [("a", 3), ("b", 0), ("b", 1)]);
    }

    #[test]
    fn unknown_category_is_fatal() {
        let scores = vec![
            score("a", 0, Category::Code, 0.1, -1.0),
            score("b", 0, Category::Code, 0.2, -2.0),
        ];
        let table = ScoreTable::new(scores, 0.5, Standardization::PerCategory).unwrap();
        assert!(select(&table, &BTreeMap::from([(Category::Book, Budget::Chunks(1))])).is_err());
    }

    #[test]
    fn budget_parsing() {
        assert_eq!("chunks:10".parse::<Budget>().unwrap(), Budget::Chunks(10));
        assert_eq!("fraction:0.25".parse::<Budget>().unwrap(), Budget::Fraction(0.25));
        assert!("fraction:1.5".parse::<Budget>().is_err());
        assert!("10".parse::<Budget>().is_err());
    }

    #[test]
    fn singleton_report() {
        let r = stats_report(&[score("a", 0, Category::Arxiv, 0.4, -3e-7)]).unwrap();
        let c = &r.categories[&Category::Arxiv];
        assert_eq!((c.ds_t.min, c.ds_t.max, c.ds_t.mean), (0.4, 0.4, 0.4));
        assert_eq!((c.du_t.min, c.du_t.max, c.du_t.mean), (-3e-7, -3e-7, -3e-7));
        assert_eq!(c.ds_t.histogram.counts.len(), 64);
        assert_eq!(c.ds_t.histogram.counts[0], 1);
        assert_eq!(c.ds_reference_band.fraction_inside, 1.0);
    }

    #[test]
    fn empty_report_is_error() {
        assert!(stats_report(&[]).is_err());
    }

    #[test]
    fn histogram_puts_max_in_last_bin() {
        let s = summarize(&[0.0, 0.5, 1.0]);
        assert_eq!(s.histogram.counts[0], 1);
        assert_eq!(s.histogram.counts[32], 1);
        assert_eq!(s.histogram.counts[63], 1);
    }
}
