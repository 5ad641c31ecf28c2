//! `longattn`: chunk a corpus, score chunks by long-range attention
//! dependency, and select the strongest per category.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use longattn_core::chunker::ExactLengthPolicy;
use longattn_core::corpus::Category;
use longattn_core::depscore::PopulationMode;
use longattn_core::selector::{Budget, Standardization};
use longattn_core::{Error, Result};

use commands::Stage;
use config::{InputSpec, Overrides, PipelineConfig, SourceSpec};

#[derive(Parser)]
#[command(name = "longattn", version, about = "Select long-context training data by attention dependency scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split documents into fixed-length windows and write the chunk store.
    Chunk(Common),
    /// Score every chunk in the store; resumes an existing score file.
    Score(Common),
    /// Standardize scores and pick the top chunks per category.
    Select(Common),
    /// Run chunk, score and select in sequence.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Stop after the given stage (simulates an interrupted run).
        #[arg(long, value_enum, hide = true)]
        stop_after: Option<Stage>,
    },
    /// Summarize a score file: per-category ranges and histograms.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Score file to read instead of the one in the output directory.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, env = "LONGATTN_CONFIG")]
    config: Option<PathBuf>,
    /// Chunk length L in tokens.
    #[arg(long)]
    window_size: Option<usize>,
    /// Minimum token distance k (default L/4).
    #[arg(long, short = 'k')]
    min_token_distance: Option<usize>,
    /// Weight of the uniformity score in the combined score.
    #[arg(long)]
    alpha: Option<f64>,
    /// Query and key tile length of the streaming scorer.
    #[arg(long)]
    tile: Option<usize>,
    /// valid-only or full-triangle.
    #[arg(long)]
    population_mode: Option<PopulationMode>,
    /// keep-exact or literal.
    #[arg(long)]
    exact_length_policy: Option<ExactLengthPolicy>,
    /// per-category or global.
    #[arg(long)]
    standardization: Option<Standardization>,
    /// Scoring threads; 0 uses all cores, 1 runs serially.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Tokenizer spec JSON (byte-level when absent).
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Synthetic attention pattern: uniform, sink, local or banded(W).
    #[arg(long, conflicts_with_all = ["weights", "model_config"])]
    synthetic: Option<String>,
    /// First-layer weights (safetensors); needs --model-config.
    #[arg(long, requires = "model_config")]
    weights: Option<PathBuf>,
    /// Model config JSON. Without --weights, weights are drawn from --seed.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Input as CATEGORY[:FORMAT]=PATH; repeatable.
    #[arg(long = "input", value_name = "CATEGORY[:FORMAT]=PATH")]
    inputs: Vec<String>,
    /// Budget as CATEGORY=tokens:N|chunks:N|fraction:F; repeatable.
    #[arg(long = "budget", value_name = "CATEGORY=BUDGET")]
    budgets: Vec<String>,
}

impl Common {
    fn resolve(self) -> Result<PipelineConfig> {
        let source = match (self.synthetic, self.weights, self.model_config) {
            (Some(pattern), _, _) => Some(SourceSpec::Synthetic { pattern }),
            (None, Some(weights), Some(config)) => Some(SourceSpec::Model { weights, config }),
            (None, None, Some(config)) => Some(SourceSpec::RandomModel { config }),
            _ => None,
        };
        let inputs = self
            .inputs
            .iter()
            .map(|s| parse_input(s))
            .collect::<Result<_>>()?;
        let budgets = self
            .budgets
            .iter()
            .map(|s| parse_budget(s))
            .collect::<Result<_>>()?;
        let overrides = Overrides {
            window_size: self.window_size,
            min_token_distance: self.min_token_distance,
            alpha: self.alpha,
            tile: self.tile,
            population_mode: self.population_mode,
            exact_length_policy: self.exact_length_policy,
            standardization: self.standardization,
            workers: self.workers,
            seed: self.seed,
            output_dir: self.output_dir,
            tokenizer: self.tokenizer,
            source,
            inputs,
            budgets,
        };
        PipelineConfig::resolve(self.config.as_deref(), overrides)
    }
}

fn parse_input(s: &str) -> Result<InputSpec> {
    let bad = || Error::Config(format!("--input {s:?}: expected CATEGORY[:FORMAT]=PATH"));
    let (head, path) = s.split_once('=').ok_or_else(bad)?;
    let (category, format) = head.split_once(':').unwrap_or((head, "jsonl"));
    Ok(InputSpec {
        path: PathBuf::from(path),
        category: category.parse::<Category>().map_err(|_| bad())?,
        format: format.to_string(),
    })
}

fn parse_budget(s: &str) -> Result<(Category, Budget)> {
    let bad = || Error::Config(format!("--budget {s:?}: expected CATEGORY=BUDGET"));
    let (category, budget) = s.split_once('=').ok_or_else(bad)?;
    Ok((category.parse().map_err(|_| bad())?, budget.parse()?))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("summary serializes")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Chunk(common) => {
            let summary = commands::cmd_chunk(&common.resolve()?)?;
            println!("{}", json(&summary));
        }
        Command::Score(common) => {
            let summary = commands::cmd_score(&common.resolve()?)?;
            println!("{}", json(&summary));
        }
        Command::Select(common) => {
            let (_, table) = commands::cmd_select(&common.resolve()?)?;
            print!("{table}");
        }
        Command::Pipeline { common, stop_after } => {
            let outcome = commands::cmd_pipeline(&common.resolve()?, stop_after)?;
            if let Some(score) = &outcome.score {
                eprintln!(
                    "scored {} chunk(s), {} already scored, {} rejected",
                    score.scored_now, score.already_scored, score.rejected
                );
            }
            if let Some((_, table)) = &outcome.select {
                print!("{table}");
            }
        }
        Command::Stats { common, scores } => {
            let report = commands::cmd_stats(&common.resolve()?, scores.as_deref())?;
            println!("{}", json(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("longattn: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
