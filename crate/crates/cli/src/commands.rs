//! The pipeline stages. Each one persists its outputs under the configured
//! output directory and writes a JSON summary carrying input fingerprints.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use longattn_core::attn::{AttentionSource, LayerWeights, ModelConfig, ScoringModel};
use longattn_core::chunker::{plan_to_chunks, sliding_window_sample, ExactLengthPolicy};
use longattn_core::corpus::{
    ingest_documents, Category, ChunkStoreReader, ChunkStoreWriter, InputFormat, Tokenizer,
    TokenizerSpec,
};
use longattn_core::depscore::{score_chunk_streaming, ChunkScore, PopulationMode};
use longattn_core::fingerprint::{bytes_fingerprint, file_fingerprint};
use longattn_core::records::{manifest_jsonl, read_scores, score_line};
use longattn_core::selector::{
    select, stats_report, CategorySelection, GroupStats, ScoreTable, Standardization,
    StatsReport,
};
use longattn_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_pattern, InputSpec, PipelineConfig, SourceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub category: Category,
    pub format: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSummary {
    pub documents_in: u64,
    pub documents_discarded_short: u64,
    pub chunks_out: u64,
    pub policy: ExactLengthPolicy,
    pub window_size: usize,
    pub tokenizer: String,
    pub inputs: Vec<InputRef>,
    pub warnings: Vec<String>,
    pub chunk_store: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub chunk_store: FileRef,
    pub source_fingerprint: String,
    pub window_size: usize,
    pub min_token_distance: usize,
    pub tile: usize,
    pub population_mode: PopulationMode,
    pub chunks_total: usize,
    pub already_scored: usize,
    pub scored_now: usize,
    pub rejected: usize,
    pub warnings: Vec<String>,
    pub scores: FileRef,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectSummary {
    pub alpha: f64,
    pub standardization: Standardization,
    pub window_size: usize,
    pub min_token_distance: usize,
    pub budgets: BTreeMap<Category, String>,
    /// z-score moments, by category or `"all"`.
    pub statistics: BTreeMap<String, GroupStats>,
    pub categories: BTreeMap<Category, CategorySelection>,
    pub scores: FileRef,
    pub manifest: FileRef,
}

fn config_error(field: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {message}"))
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_output_dir(c: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&c.output_dir).map_err(|e| Error::io(&c.output_dir, e))
}

fn build_tokenizer(c: &PipelineConfig) -> Result<(Tokenizer, String)> {
    match &c.tokenizer {
        None => Ok((Tokenizer::Byte, "byte".into())),
        Some(path) => {
            let spec = TokenizerSpec::from_file(path)?;
            let mut label = file_fingerprint(path)?;
            if let TokenizerSpec::Bpe { vocab, merges } = &spec {
                label = format!("{label}+{}+{}", file_fingerprint(vocab)?, file_fingerprint(merges)?);
            }
            Ok((spec.build()?, label))
        }
    }
}

/// Directories hash the sorted list of `name  fingerprint` lines.
fn input_fingerprint(input: &InputSpec, format: InputFormat) -> Result<String> {
    match format {
        InputFormat::Jsonl => file_fingerprint(&input.path),
        InputFormat::PlainDir => {
            let entries = fs::read_dir(&input.path).map_err(|e| Error::io(&input.path, e))?;
            let mut files = Vec::new();
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&input.path, e))?;
                if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
                    files.push(entry.path());
                }
            }
            files.sort();
            let mut listing = String::new();
            for f in files {
                let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
                listing.push_str(&format!("{name}  {}\n", file_fingerprint(&f)?));
            }
            Ok(bytes_fingerprint(listing.as_bytes()))
        }
    }
}

fn input_refs(c: &PipelineConfig) -> Result<Vec<InputRef>> {
    c.inputs
        .iter()
        .map(|i| {
            let format: InputFormat = i.format.parse()?;
            Ok(InputRef {
                path: i.path.clone(),
                category: i.category,
                format: i.format.clone(),
                fingerprint: input_fingerprint(i, format)?,
            })
        })
        .collect()
}

pub fn cmd_chunk(c: &PipelineConfig) -> Result<ChunkSummary> {
    if c.inputs.is_empty() {
        return Err(config_error("inputs", "no input files configured"));
    }
    create_output_dir(c)?;
    let (tokenizer, tokenizer_label) = build_tokenizer(c)?;
    let inputs = input_refs(c)?;
    let store_path = c.chunk_store_path();
    let partial = store_path.with_extension("bin.partial");
    let mut writer = ChunkStoreWriter::create(&partial, c.window_size)?;

    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    let (mut documents_in, mut discarded) = (0u64, 0u64);
    for spec in &c.inputs {
        let mut stream = ingest_documents(&spec.path, spec.category, spec.format.parse()?)?;
        for document in stream.by_ref() {
            let document = document?;
            documents_in += 1;
            if !seen.insert(document.doc_id.clone()) {
                warnings.push(format!(
                    "{}: duplicate doc_id {:?} across inputs; skipped",
                    spec.path.display(),
                    document.doc_id
                ));
                continue;
            }
            let seq = match tokenizer.tokenize(&document) {
                Ok(seq) => seq,
                Err(Error::Tokenizer(m)) => {
                    warnings.push(format!("{}: {m}; skipped", spec.path.display()));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let plan = sliding_window_sample(seq.len(), c.window_size, c.exact_length_policy)?;
            if plan.is_empty() {
                discarded += 1;
                continue;
            }
            for chunk in plan_to_chunks(&plan, &seq, spec.category)? {
                writer.push(&chunk)?;
            }
        }
        warnings.extend(stream.warnings().iter().cloned());
    }
    let chunks_out = writer.finish()?;
    fs::rename(&partial, &store_path).map_err(|e| Error::io(&store_path, e))?;
    for w in &warnings {
        log::warn!("{w}");
    }

    let summary = ChunkSummary {
        documents_in,
        documents_discarded_short: discarded,
        chunks_out,
        policy: c.exact_length_policy,
        window_size: c.window_size,
        tokenizer: tokenizer_label,
        inputs,
        warnings,
        chunk_store: FileRef {
            fingerprint: file_fingerprint(&store_path)?,
            path: store_path,
        },
    };
    write_json(&c.chunk_summary_path(), &summary)?;
    Ok(summary)
}

/// True when the existing chunk store was built from the same inputs and
/// settings and is unchanged on disk.
pub fn chunk_stage_is_current(c: &PipelineConfig) -> Result<bool> {
    let Ok(text) = fs::read_to_string(c.chunk_summary_path()) else {
        return Ok(false);
    };
    let Ok(previous) = serde_json::from_str::<ChunkSummary>(&text) else {
        return Ok(false);
    };
    let store = c.chunk_store_path();
    if !store.exists() || file_fingerprint(&store)? != previous.chunk_store.fingerprint {
        return Ok(false);
    }
    let (_, tokenizer_label) = build_tokenizer(c)?;
    Ok(previous.window_size == c.window_size
        && previous.policy == c.exact_length_policy
        && previous.tokenizer == tokenizer_label
        && previous.inputs == input_refs(c)?)
}

fn as_weights_error(e: Error) -> Error {
    match e {
        Error::Weights(_) => e,
        other => Error::Weights(other.to_string()),
    }
}

pub fn resolve_source(c: &PipelineConfig) -> Result<AttentionSource> {
    let spec = c
        .source
        .as_ref()
        .ok_or_else(|| config_error("source", "no attention source configured"))?;
    match spec {
        SourceSpec::Synthetic { pattern } => Ok(parse_pattern(pattern)?.into()),
        SourceSpec::Model { weights, config } => ScoringModel::load(weights, config)
            .map(Into::into)
            .map_err(as_weights_error),
        SourceSpec::RandomModel { config } => {
            let model_config = ModelConfig::from_file(config).map_err(as_weights_error)?;
            let weights = LayerWeights::seeded_random(&model_config, c.seed);
            ScoringModel::new(model_config, weights)
                .map(Into::into)
                .map_err(as_weights_error)
        }
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))
}

/// Existing score records, checked against the current settings. A torn
/// trailing line from an interrupted run is dropped from the file.
fn load_existing_scores(
    c: &PipelineConfig,
    source_fingerprint: &str,
) -> Result<HashSet<(String, u32)>> {
    let path = c.scores_path();
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let (existing, skipped) = read_scores(&path, true)?;
    for s in &existing {
        let mismatch = if s.window != c.window_size {
            Some(format!("L = {}", s.window))
        } else if s.k != c.min_token_distance {
            Some(format!("k = {}", s.k))
        } else if s.population_mode != c.population_mode {
            Some(format!("population_mode = {}", s.population_mode.as_str()))
        } else if s.source_fingerprint != source_fingerprint {
            Some(format!("source {}", s.source_fingerprint))
        } else {
            None
        };
        if let Some(what) = mismatch {
            return Err(Error::Config(format!(
                "{} holds records scored with {what}, which conflicts with the current configuration; \
                 remove the file or restore the settings",
                path.display()
            )));
        }
    }
    if skipped > 0 {
        log::warn!("{}: dropping {skipped} unreadable line(s) before resuming", path.display());
        let mut text = String::new();
        for s in &existing {
            text.push_str(&score_line(s));
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(existing
        .into_iter()
        .map(|s| (s.doc_id, s.chunk_index))
        .collect())
}

pub fn cmd_score(c: &PipelineConfig) -> Result<ScoreSummary> {
    let source = resolve_source(c)?;
    let fingerprint = source.fingerprint();
    let store_path = c.chunk_store_path();
    let reader = ChunkStoreReader::open(&store_path)?;
    if reader.window() != c.window_size {
        return Err(config_error(
            "window_size",
            format!(
                "chunk store {} holds chunks of L = {}, configuration says L = {}",
                store_path.display(),
                reader.window(),
                c.window_size
            ),
        ));
    }
    create_output_dir(c)?;
    let done = load_existing_scores(c, &fingerprint)?;

    let mut pending = Vec::new();
    for i in 0..reader.len() {
        let r = reader.get_ref(i)?;
        if !done.contains(&(r.doc_id, r.chunk_index)) {
            pending.push(i);
        }
    }
    let already_scored = reader.len() - pending.len();

    let pool = thread_pool(c.workers)?;
    let batch = (pool.current_num_threads() * 2).max(1);
    let scores_path = c.scores_path();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&scores_path)
        .map_err(|e| Error::io(&scores_path, e))?;
    let mut out = BufWriter::new(file);
    let (mut scored_now, mut rejected) = (0, 0);
    let mut warnings = Vec::new();
    for indices in pending.chunks(batch) {
        let results: Vec<Result<ChunkScore>> = pool.install(|| {
            indices
                .par_iter()
                .map(|&i| {
                    let chunk = reader.get(i)?;
                    score_chunk_streaming(&chunk, &source, c.min_token_distance, c.tile, c.population_mode)
                })
                .collect()
        });
        for result in results {
            match result {
                Ok(score) => {
                    writeln!(out, "{}", score_line(&score)).map_err(|e| Error::io(&scores_path, e))?;
                    scored_now += 1;
                }
                Err(Error::Rejected(m)) => {
                    log::warn!("rejected {m}");
                    warnings.push(m);
                    rejected += 1;
                }
                Err(e) => return Err(e),
            }
        }
        out.flush().map_err(|e| Error::io(&scores_path, e))?;
    }
    drop(out);

    let summary = ScoreSummary {
        chunk_store: FileRef {
            fingerprint: file_fingerprint(&store_path)?,
            path: store_path,
        },
        source_fingerprint: fingerprint,
        window_size: c.window_size,
        min_token_distance: c.min_token_distance,
        tile: c.tile,
        population_mode: c.population_mode,
        chunks_total: reader.len(),
        already_scored,
        scored_now,
        rejected,
        warnings,
        scores: FileRef {
            fingerprint: file_fingerprint(&scores_path)?,
            path: scores_path,
        },
    };
    write_json(&c.score_summary_path(), &summary)?;
    Ok(summary)
}

fn read_score_file(path: &Path) -> Result<Vec<ChunkScore>> {
    let (scores, _) = read_scores(path, false).map_err(|e| match e {
        Error::Format(m) => Error::Selection(m),
        other => other,
    })?;
    if scores.is_empty() {
        return Err(Error::Selection(format!("{}: no score records", path.display())));
    }
    Ok(scores)
}

pub fn cmd_select(c: &PipelineConfig) -> Result<(SelectSummary, String)> {
    if c.budgets.is_empty() {
        return Err(config_error("budgets", "no per-category budgets configured"));
    }
    let scores_path = c.scores_path();
    let scores = read_score_file(&scores_path)?;
    if let Some(s) = scores
        .iter()
        .find(|s| s.window != c.window_size || s.k != c.min_token_distance)
    {
        return Err(config_error(
            "window_size",
            format!(
                "{} holds records with L = {}, k = {}; configuration says L = {}, k = {}",
                scores_path.display(),
                s.window,
                s.k,
                c.window_size,
                c.min_token_distance
            ),
        ));
    }
    let table = ScoreTable::new(scores, c.alpha, c.standardization)?;
    let manifest = select(&table, &c.budgets)?;

    create_output_dir(c)?;
    let manifest_path = c.manifest_path();
    fs::write(&manifest_path, manifest_jsonl(&manifest)).map_err(|e| Error::io(&manifest_path, e))?;
    let summary = SelectSummary {
        alpha: c.alpha,
        standardization: c.standardization,
        window_size: c.window_size,
        min_token_distance: c.min_token_distance,
        budgets: c.budgets.iter().map(|(k, b)| (*k, b.to_string())).collect(),
        statistics: table.stats.clone(),
        categories: manifest.categories.clone(),
        scores: FileRef {
            fingerprint: file_fingerprint(&scores_path)?,
            path: scores_path,
        },
        manifest: FileRef {
            fingerprint: file_fingerprint(&manifest_path)?,
            path: manifest_path,
        },
    };
    write_json(&c.manifest_sidecar_path(), &summary)?;
    Ok((summary.clone(), threshold_table(&summary)))
}

pub fn threshold_table(s: &SelectSummary) -> String {
    let mut out = format!(
        "{:<8} {:>10} {:>10} {:>12} {:>12} {:>22}\n",
        "category", "available", "selected", "budget_tok", "selected_tok", "lds_threshold"
    );
    for (category, sel) in &s.categories {
        let threshold = sel.threshold.map_or("-".to_string(), |t| format!("{t:.6e}"));
        out.push_str(&format!(
            "{:<8} {:>10} {:>10} {:>12} {:>12} {:>22}\n",
            category.as_str(),
            sel.available_chunks,
            sel.selected_chunks,
            sel.budget_tokens,
            sel.selected_tokens,
            threshold
        ));
    }
    out
}

pub fn cmd_stats(c: &PipelineConfig, scores: Option<&Path>) -> Result<StatsReport> {
    let path = scores.map(Path::to_path_buf).unwrap_or_else(|| c.scores_path());
    let report = stats_report(&read_score_file(&path)?)?;
    create_output_dir(c)?;
    write_json(&c.stats_path(), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Chunk,
    Score,
    Select,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub chunk: Option<ChunkSummary>,
    pub score: Option<ScoreSummary>,
    pub select: Option<(SelectSummary, String)>,
}

/// Chunk, score, select. Chunking is skipped when the stored chunks are
/// current; scoring resumes from whatever the score file already holds.
pub fn cmd_pipeline(c: &PipelineConfig, stop_after: Option<Stage>) -> Result<PipelineOutcome> {
    let mut outcome = PipelineOutcome {
        chunk: None,
        score: None,
        select: None,
    };
    if chunk_stage_is_current(c)? {
        log::info!("chunk store is current; skipping chunking");
    } else {
        // Scores of a rebuilt store are stale.
        let scores = c.scores_path();
        if scores.exists() {
            fs::remove_file(&scores).map_err(|e| Error::io(&scores, e))?;
        }
        outcome.chunk = Some(cmd_chunk(c)?);
    }
    if stop_after == Some(Stage::Chunk) {
        return Ok(outcome);
    }
    outcome.score = Some(cmd_score(c)?);
    if stop_after == Some(Stage::Score) {
        return Ok(outcome);
    }
    outcome.select = Some(cmd_select(c)?);
    Ok(outcome)
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Weights(_) => 3,
        Error::Selection(_) => 4,
        _ => 1,
    }
}

