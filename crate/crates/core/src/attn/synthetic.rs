use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CausalMatrix;
use crate::error::{Error, Result};

/// Closed-form causal attention patterns. Rows are 1-based query positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "pattern")]
pub enum SyntheticKind {
    /// `M[q][p] = 1/q` for `p ≤ q`.
    Uniform,
    /// All mass on the first token.
    Sink,
    /// All mass on the previous token (`M[1][1] = 1`).
    Local,
    /// Uniform over the last `min(width, q)` positions.
    Banded { width: usize },
}

impl SyntheticKind {
    /// Entry `M[q][p]`, 1-based, zero above the diagonal.
    pub fn entry(self, q: usize, p: usize) -> f64 {
        if p == 0 || p > q {
            return 0.0;
        }
        match self {
            SyntheticKind::Uniform => 1.0 / q as f64,
            SyntheticKind::Sink => (p == 1) as u8 as f64,
            SyntheticKind::Local => {
                let target = if q == 1 { 1 } else { q - 1 };
                (p == target) as u8 as f64
            }
            SyntheticKind::Banded { width } => {
                let span = width.min(q);
                if p > q - span {
                    1.0 / span as f64
                } else {
                    0.0
                }
            }
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            SyntheticKind::Banded { width: 0 } => {
                Err(Error::Config("banded pattern needs width ≥ 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntheticKind::Uniform => f.write_str("uniform"),
            SyntheticKind::Sink => f.write_str("sink"),
            SyntheticKind::Local => f.write_str("local"),
            SyntheticKind::Banded { width } => write!(f, "banded({width})"),
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    /// Parses `uniform`, `sink`, `local`, `banded(W)` or `banded:W`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let kind = match s {
            "uniform" => SyntheticKind::Uniform,
            "sink" => SyntheticKind::Sink,
            "local" => SyntheticKind::Local,
            _ => {
                let width = s
                    .strip_prefix("banded(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("banded:"))
                    .and_then(|w| w.trim().parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown synthetic pattern {s:?} (expected uniform, sink, local or banded(W))"
                        ))
                    })?;
                SyntheticKind::Banded { width }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Full `L × L` causal matrix of a synthetic pattern.
pub fn synthetic_matrix(kind: SyntheticKind, len: usize) -> CausalMatrix {
    let rows = (1..=len)
        .map(|q| (1..=q).map(|p| kind.entry(q, p)).collect())
        .collect();
    CausalMatrix::from_rows_unchecked(rows)
}
