//! Pipeline configuration: TOML file, then command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use longattn_core::attn::SyntheticKind;
use longattn_core::chunker::ExactLengthPolicy;
use longattn_core::corpus::{Category, InputFormat};
use longattn_core::depscore::PopulationMode;
use longattn_core::selector::{Budget, Standardization, DEFAULT_ALPHA};
use longattn_core::{Error, Result};
use serde::Deserialize;

pub const DEFAULT_WINDOW: usize = 32768;
pub const DEFAULT_TILE: usize = 256;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    Synthetic { pattern: String },
    /// Real first-layer weights plus their JSON config.
    Model { weights: PathBuf, config: PathBuf },
    /// Weights drawn from the run seed for the given JSON config.
    RandomModel { config: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub category: Category,
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "jsonl".into()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum BudgetEntry {
    Text(String),
    Table(Budget),
}

/// Raw file contents; every field optional so flags can fill gaps.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    window_size: Option<usize>,
    min_token_distance: Option<usize>,
    alpha: Option<f64>,
    tile: Option<usize>,
    population_mode: Option<PopulationMode>,
    exact_length_policy: Option<ExactLengthPolicy>,
    standardization: Option<Standardization>,
    workers: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
    source: Option<SourceSpec>,
    #[serde(default)]
    inputs: Vec<InputSpec>,
    #[serde(default)]
    budgets: BTreeMap<Category, BudgetEntry>,
}

/// Values given on the command line; `None` leaves the file value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub window_size: Option<usize>,
    pub min_token_distance: Option<usize>,
    pub alpha: Option<f64>,
    pub tile: Option<usize>,
    pub population_mode: Option<PopulationMode>,
    pub exact_length_policy: Option<ExactLengthPolicy>,
    pub standardization: Option<Standardization>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub source: Option<SourceSpec>,
    pub inputs: Vec<InputSpec>,
    pub budgets: Vec<(Category, Budget)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window_size: usize,
    pub min_token_distance: usize,
    pub alpha: f64,
    pub tile: usize,
    pub population_mode: PopulationMode,
    pub exact_length_policy: ExactLengthPolicy,
    pub standardization: Standardization,
    /// 0 means available parallelism.
    pub workers: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Byte-level tokenization when absent.
    pub tokenizer: Option<PathBuf>,
    pub source: Option<SourceSpec>,
    pub inputs: Vec<InputSpec>,
    pub budgets: BTreeMap<Category, Budget>,
}

fn field(name: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {message}"))
}

impl PipelineConfig {
    /// Merges defaults, the optional file and the overrides, then validates.
    /// Relative paths in the file resolve against the file's directory.
    pub fn resolve(file: Option<&Path>, o: Overrides) -> Result<Self> {
        let (f, base) = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let f: FileConfig = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                (f, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rebase = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mut budgets = BTreeMap::new();
        for (category, entry) in f.budgets {
            let budget = match entry {
                BudgetEntry::Text(s) => s.parse().map_err(|e: Error| field(&format!("budgets.{category}"), strip(e)))?,
                BudgetEntry::Table(b) => b,
            };
            budgets.insert(category, budget);
        }
        budgets.extend(o.budgets);

        let window_size = o.window_size.or(f.window_size).unwrap_or(DEFAULT_WINDOW);
        let source = o.source.or(f.source.map(|s| match s {
            SourceSpec::Model { weights, config } => SourceSpec::Model {
                weights: rebase(weights),
                config: rebase(config),
            },
            SourceSpec::RandomModel { config } => SourceSpec::RandomModel { config: rebase(config) },
            other => other,
        }));
        let inputs = if o.inputs.is_empty() {
            f.inputs
                .into_iter()
                .map(|i| InputSpec { path: rebase(i.path), ..i })
                .collect()
        } else {
            o.inputs
        };
        let config = Self {
            window_size,
            min_token_distance: o
                .min_token_distance
                .or(f.min_token_distance)
                .unwrap_or(window_size / 4),
            alpha: o.alpha.or(f.alpha).unwrap_or(DEFAULT_ALPHA),
            tile: o.tile.or(f.tile).unwrap_or(DEFAULT_TILE),
            population_mode: o.population_mode.or(f.population_mode).unwrap_or_default(),
            exact_length_policy: o.exact_length_policy.or(f.exact_length_policy).unwrap_or_default(),
            standardization: o.standardization.or(f.standardization).unwrap_or_default(),
            workers: o.workers.or(f.workers).unwrap_or(0),
            seed: o.seed.or(f.seed).unwrap_or(0),
            output_dir: o
                .output_dir
                .or(f.output_dir.map(rebase))
                .unwrap_or_else(|| PathBuf::from("longattn-out")),
            tokenizer: o.tokenizer.or(f.tokenizer.map(rebase)),
            source,
            inputs,
            budgets,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let (l, k) = (self.window_size, self.min_token_distance);
        if l == 0 {
            return Err(field("window_size", "must be positive"));
        }
        if k == 0 || k >= l {
            return Err(field(
                "min_token_distance",
                format!("must satisfy 0 < k < L, got k = {k} with L = {l}"),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(field("alpha", format!("must be a finite value ≥ 0, got {}", self.alpha)));
        }
        if self.tile == 0 {
            return Err(field("tile", "must be at least 1"));
        }
        for (category, budget) in &self.budgets {
            budget
                .validate()
                .map_err(|e| field(&format!("budgets.{category}"), strip(e)))?;
        }
        for (i, input) in self.inputs.iter().enumerate() {
            input
                .format
                .parse::<InputFormat>()
                .map_err(|e| field(&format!("inputs[{i}].format"), strip(e)))?;
        }
        if let Some(SourceSpec::Synthetic { pattern }) = &self.source {
            parse_pattern(pattern)?;
        }
        Ok(())
    }

    pub fn chunk_store_path(&self) -> PathBuf {
        self.output_dir.join("chunks.bin")
    }

    pub fn chunk_summary_path(&self) -> PathBuf {
        self.output_dir.join("chunk_summary.json")
    }

    pub fn scores_path(&self) -> PathBuf {
        self.output_dir.join("scores.jsonl")
    }

    pub fn score_summary_path(&self) -> PathBuf {
        self.output_dir.join("score_summary.json")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.jsonl")
    }

    pub fn manifest_sidecar_path(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }

    pub fn stats_path(&self) -> PathBuf {
        self.output_dir.join("stats.json")
    }
}

pub fn parse_pattern(pattern: &str) -> Result<SyntheticKind> {
    pattern
        .parse::<SyntheticKind>()
        .map_err(|e| field("source.pattern", strip(e)))
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
