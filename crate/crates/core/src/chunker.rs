//! Sliding-window sampling of long token sequences into fixed-length windows.
//!
//! Front and back windows are peeled off while more than three windows'
//! worth of tokens remain. The remainder `Δ` is then covered by two windows
//! (`W < Δ ≤ 2W`) or by front, middle and back windows (`2W < Δ ≤ 3W`).
//! Windows in the final phase may overlap.

use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, TokenChunk, TokenSequence};
use crate::error::{Error, Result};

/// What to do with a sequence of exactly `W` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactLengthPolicy {
    /// Follow the sampling algorithm verbatim: a length-`W` sequence yields no window.
    Literal,
    /// Emit the single window `[0, W)` for a length-`W` sequence.
    #[default]
    KeepExact,
}

impl ExactLengthPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ExactLengthPolicy::Literal => "literal",
            ExactLengthPolicy::KeepExact => "keep-exact",
        }
    }
}

impl FromStr for ExactLengthPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ExactLengthPolicy::Literal),
            "keep-exact" | "keep_exact" => Ok(ExactLengthPolicy::KeepExact),
            _ => Err(Error::Config(format!(
                "unknown exact-length policy {s:?} (expected literal or keep-exact)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    /// Half-open token ranges in emission order.
    pub windows: Vec<Range<usize>>,
    pub policy_used: ExactLengthPolicy,
    /// Sequence length the plan was computed for.
    pub source_len: usize,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn sliding_window_sample(n: usize, window: usize, policy: ExactLengthPolicy) -> Result<WindowPlan> {
    if window == 0 {
        return Err(Error::Config("window size must be positive".into()));
    }
    let w = window;
    let mut windows = Vec::new();
    let plan = |windows| WindowPlan {
        windows,
        policy_used: policy,
        source_len: n,
    };
    if n < w {
        return Ok(plan(windows));
    }
    if n == w {
        if policy == ExactLengthPolicy::KeepExact {
            windows.push(0..w);
        }
        return Ok(plan(windows));
    }

    let (mut l, mut r) = (0usize, n);
    while r - l > 3 * w {
        windows.push(l..l + w);
        l += w;
        windows.push(r - w..r);
        r -= w;
    }
    let delta = r - l;
    if w < delta && delta <= 2 * w {
        windows.push(l..l + w);
        windows.push(r - w..r);
    } else if 2 * w < delta && delta <= 3 * w {
        let m = l + (delta - w) / 2;
        windows.push(l..l + w);
        windows.push(m..m + w);
        windows.push(r - w..r);
    }
    Ok(plan(windows))
}

/// Materializes one chunk per window, with `chunk_index` following plan order.
pub fn plan_to_chunks(plan: &WindowPlan, seq: &TokenSequence, category: Category) -> Result<Vec<TokenChunk>> {
    if plan.source_len != seq.len() {
        return Err(Error::Config(format!(
            "plan computed for {} tokens but {} has {}",
            plan.source_len,
            seq.doc_id,
            seq.len()
        )));
    }
    plan.windows
        .iter()
        .enumerate()
        .map(|(i, range)| {
            let tokens = seq.token_ids.get(range.clone()).ok_or_else(|| {
                Error::Config(format!(
                    "window {range:?} exceeds sequence {} of length {}",
                    seq.doc_id,
                    seq.len()
                ))
            })?;
            Ok(TokenChunk {
                doc_id: seq.doc_id.clone(),
                category,
                chunk_index: i as u32,
                window_start: range.start as u64,
                token_ids: tokens.to_vec(),
            })
        })
        .collect()
}
