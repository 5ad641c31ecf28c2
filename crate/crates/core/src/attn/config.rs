use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency rescaling used by long-context checkpoints
/// (`"rope_type": "llama3"` in Hugging Face configs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeScaling {
    pub factor: f64,
    pub low_freq_factor: f64,
    pub high_freq_factor: f64,
    pub original_max_position_embeddings: f64,
}

/// Architecture parameters of the scoring layer.
///
/// Field names follow this crate; the usual Hugging Face spellings
/// (`hidden_size`, `num_attention_heads`, ...) are accepted as aliases, so a
/// checkpoint's `config.json` can be used directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(alias = "hidden_size")]
    pub hidden_dim: usize,
    #[serde(alias = "num_attention_heads")]
    pub n_query_heads: usize,
    #[serde(alias = "num_key_value_heads")]
    pub n_kv_heads: usize,
    #[serde(default)]
    pub head_dim: Option<usize>,
    #[serde(default = "default_theta")]
    pub rope_theta: f64,
    #[serde(alias = "rms_norm_eps", default = "default_eps")]
    pub norm_eps: f64,
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rope_scaling: Option<RopeScaling>,
}

fn default_theta() -> f64 {
    10000.0
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // HF configs carry `rope_scaling: null` or non-llama3 variants.
        if let Some(obj) = value.as_object_mut() {
            let keep = obj
                .get("rope_scaling")
                .and_then(|s| s.get("factor"))
                .is_some();
            if !keep {
                obj.remove("rope_scaling");
            }
        }
        let config: ModelConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
            .unwrap_or(self.hidden_dim / self.n_query_heads.max(1))
    }

    /// Query heads sharing one key head.
    pub fn group_size(&self) -> usize {
        self.n_query_heads / self.n_kv_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.n_query_heads == 0 || self.n_kv_heads == 0 {
            return bad("hidden_dim, n_query_heads and n_kv_heads must be positive".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if !self.n_query_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!(
                "n_kv_heads {} does not divide n_query_heads {}",
                self.n_kv_heads, self.n_query_heads
            ));
        }
        let hd = self.head_dim();
        if hd == 0 || !hd.is_multiple_of(2) {
            return bad(format!("head_dim {hd} must be positive and even"));
        }
        if self.n_query_heads * hd != self.hidden_dim {
            return bad(format!(
                "n_query_heads·head_dim = {}·{} ≠ hidden_dim {}",
                self.n_query_heads, hd, self.hidden_dim
            ));
        }
        if self.rope_theta.is_nan() || self.rope_theta <= 0.0 {
            return bad(format!("rope_theta {} must be positive", self.rope_theta));
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return bad(format!("norm_eps {} must be positive", self.norm_eps));
        }
        Ok(())
    }
}
