//! Python bindings for the longattn scoring library.

use std::collections::BTreeMap;
use std::sync::Arc;

use longattn_core::attn::{
    self, AttentionSource, CausalMatrix, LayerWeights, ModelConfig, SyntheticKind,
};
use longattn_core::chunker::{self, ExactLengthPolicy};
use longattn_core::corpus::{self, Category, TokenChunk};
use longattn_core::depscore::{self, PopulationMode};
use longattn_core::selector::{self, Budget, ScoreTable, Standardization};
use longattn_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

create_exception!(longattn, LongAttnError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => LongAttnError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T> {
    s.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<CausalMatrix> {
    CausalMatrix::from_rows(rows).map_err(to_py)
}

/// Windows `(start, end)` for a document of `n` tokens.
#[pyfunction]
#[pyo3(signature = (n, window, policy = "keep-exact"))]
fn sliding_window_sample(n: usize, window: usize, policy: &str) -> PyResult<Vec<(usize, usize)>> {
    let policy: ExactLengthPolicy = parse(policy, "exact-length policy")?;
    let plan = chunker::sliding_window_sample(n, window, policy).map_err(to_py)?;
    Ok(plan.windows.iter().map(|r| (r.start, r.end)).collect())
}

#[pyfunction]
fn m_t_entry_count(length: usize, k: usize) -> PyResult<u64> {
    if k >= length {
        return Err(PyValueError::new_err("k must be smaller than L"));
    }
    Ok(depscore::m_t_entry_count(length, k))
}

/// Causal attention rows of a synthetic pattern; row `q` has `q` entries.
#[pyfunction]
fn synthetic_matrix(pattern: &str, length: usize) -> PyResult<Vec<Vec<f64>>> {
    let kind: SyntheticKind = pattern.parse().map_err(to_py)?;
    Ok(attn::synthetic_matrix(kind, length).into_rows())
}

#[pyfunction]
fn ds_t_from_matrix(rows: Vec<Vec<f64>>, k: usize) -> PyResult<f64> {
    depscore::ds_t_from_matrix(&matrix(rows)?, k).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (rows, k, population_mode = "valid-only"))]
fn du_t_from_matrix(rows: Vec<Vec<f64>>, k: usize, population_mode: &str) -> PyResult<f64> {
    let mode: PopulationMode = population_mode.parse().map_err(to_py)?;
    depscore::du_t_from_matrix(&matrix(rows)?, k, mode).map_err(to_py)
}

#[pyfunction]
fn zscore(values: Vec<f64>) -> PyResult<Vec<f64>> {
    selector::zscore(&values).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (std_ds, std_du, alpha = selector::DEFAULT_ALPHA))]
fn combine(std_ds: f64, std_du: f64, alpha: f64) -> f64 {
    selector::combine(std_ds, std_du, alpha)
}

#[pyclass(module = "longattn", name = "Chunk", from_py_object)]
#[derive(Clone)]
struct PyChunk {
    inner: TokenChunk,
}

#[pymethods]
impl PyChunk {
    #[new]
    #[pyo3(signature = (doc_id, token_ids, category = "other", chunk_index = 0, window_start = 0))]
    fn new(doc_id: String, token_ids: Vec<u32>, category: &str, chunk_index: u32, window_start: u64) -> PyResult<Self> {
        Ok(Self {
            inner: TokenChunk {
                doc_id,
                category: parse::<Category>(category, "category")?,
                chunk_index,
                window_start,
                token_ids,
            },
        })
    }

    #[getter]
    fn doc_id(&self) -> &str {
        &self.inner.doc_id
    }

    #[getter]
    fn category(&self) -> &'static str {
        self.inner.category.as_str()
    }

    #[getter]
    fn chunk_index(&self) -> u32 {
        self.inner.chunk_index
    }

    #[getter]
    fn window_start(&self) -> u64 {
        self.inner.window_start
    }

    #[getter]
    fn token_ids(&self) -> Vec<u32> {
        self.inner.token_ids.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.token_ids.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Chunk(doc_id={:?}, chunk_index={}, category={:?}, len={})",
            self.inner.doc_id,
            self.inner.chunk_index,
            self.inner.category.as_str(),
            self.inner.token_ids.len()
        )
    }
}

#[pyfunction]
fn write_chunks(path: &str, window: usize, chunks: Vec<PyChunk>) -> PyResult<u64> {
    corpus::write_chunks(path, window, chunks.iter().map(|c| &c.inner)).map_err(to_py)
}

#[pyfunction]
fn read_chunks(path: &str) -> PyResult<Vec<PyChunk>> {
    let chunks = corpus::read_chunks(path).map_err(to_py)?;
    Ok(chunks.into_iter().map(|inner| PyChunk { inner }).collect())
}

/// First-layer attention model.
#[pyclass(module = "longattn", name = "ScoringModel", frozen)]
struct PyScoringModel {
    inner: Arc<attn::ScoringModel>,
}

#[pymethods]
impl PyScoringModel {
    /// Loads safetensors weights and a JSON model config.
    #[staticmethod]
    fn load(weights_path: &str, config_path: &str) -> PyResult<Self> {
        let model = attn::ScoringModel::load(weights_path, config_path).map_err(to_py)?;
        Ok(Self { inner: Arc::new(model) })
    }

    /// Model with seeded random weights.
    #[staticmethod]
    #[pyo3(signature = (hidden_dim, n_query_heads, n_kv_heads, vocab_size, seed = 0, rope_theta = 10000.0))]
    fn random(
        hidden_dim: usize,
        n_query_heads: usize,
        n_kv_heads: usize,
        vocab_size: usize,
        seed: u64,
        rope_theta: f64,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            hidden_dim,
            n_query_heads,
            n_kv_heads,
            head_dim: None,
            rope_theta,
            norm_eps: 1e-5,
            vocab_size,
            rope_scaling: None,
        };
        config.validate().map_err(to_py)?;
        let weights = LayerWeights::seeded_random(&config, seed);
        let model = attn::ScoringModel::new(config, weights).map_err(to_py)?;
        Ok(Self { inner: Arc::new(model) })
    }

    #[getter]
    fn fingerprint(&self) -> &str {
        self.inner.fingerprint()
    }

    /// Head-averaged attention of query `q` (1-based) over keys `1..=q`.
    fn attention_row(&self, py: Python<'_>, tokens: Vec<u32>, q: usize) -> PyResult<Vec<f64>> {
        let source = AttentionSource::Model(self.inner.clone());
        py.detach(|| attn::attention_row(q, &tokens, &source)).map_err(to_py)
    }

    /// Full causal attention matrix; memory grows with L².
    fn full_matrix(&self, py: Python<'_>, tokens: Vec<u32>) -> PyResult<Vec<Vec<f64>>> {
        let source = AttentionSource::Model(self.inner.clone());
        py.detach(|| attn::full_matrix(&tokens, &source))
            .map(CausalMatrix::into_rows)
            .map_err(to_py)
    }
}

#[pyclass(module = "longattn", name = "ChunkScore", from_py_object, get_all)]
#[derive(Clone)]
struct PyChunkScore {
    doc_id: String,
    chunk_index: u32,
    category: String,
    length: usize,
    k: usize,
    ds_t: f64,
    du_t: f64,
    population_mode: String,
    source_fingerprint: String,
}

#[pymethods]
impl PyChunkScore {
    #[new]
    #[pyo3(signature = (doc_id, chunk_index, category, ds_t, du_t, length = 0, k = 0,
                        population_mode = "valid-only", source_fingerprint = ""))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        doc_id: String,
        chunk_index: u32,
        category: &str,
        ds_t: f64,
        du_t: f64,
        length: usize,
        k: usize,
        population_mode: &str,
        source_fingerprint: &str,
    ) -> PyResult<Self> {
        parse::<Category>(category, "category")?;
        population_mode.parse::<PopulationMode>().map_err(to_py)?;
        Ok(Self {
            doc_id,
            chunk_index,
            category: category.to_string(),
            length,
            k,
            ds_t,
            du_t,
            population_mode: population_mode.to_string(),
            source_fingerprint: source_fingerprint.to_string(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "ChunkScore(doc_id={:?}, chunk_index={}, category={:?}, ds_t={}, du_t={})",
            self.doc_id, self.chunk_index, self.category, self.ds_t, self.du_t
        )
    }
}

impl PyChunkScore {
    fn from_core(s: depscore::ChunkScore) -> Self {
        Self {
            doc_id: s.doc_id,
            chunk_index: s.chunk_index,
            category: s.category.as_str().to_string(),
            length: s.window,
            k: s.k,
            ds_t: s.ds_t,
            du_t: s.du_t,
            population_mode: s.population_mode.as_str().to_string(),
            source_fingerprint: s.source_fingerprint,
        }
    }

    fn to_core(&self) -> PyResult<depscore::ChunkScore> {
        Ok(depscore::ChunkScore {
            doc_id: self.doc_id.clone(),
            chunk_index: self.chunk_index,
            category: parse(&self.category, "category")?,
            window: self.length,
            k: self.k,
            ds_t: self.ds_t,
            du_t: self.du_t,
            population_mode: self.population_mode.parse().map_err(to_py)?,
            source_fingerprint: self.source_fingerprint.clone(),
        })
    }
}

/// Attention source argument: a pattern name or a `ScoringModel`.
fn source_of(source: &Bound<'_, PyAny>) -> PyResult<AttentionSource> {
    if let Ok(model) = source.cast::<PyScoringModel>() {
        return Ok(AttentionSource::Model(model.get().inner.clone()));
    }
    let pattern: String = source.extract()?;
    Ok(pattern.parse::<SyntheticKind>().map_err(to_py)?.into())
}

/// Scores one chunk with the tiled streaming path.
#[pyfunction]
#[pyo3(signature = (chunk, source, k, tile = 256, population_mode = "valid-only"))]
fn score_chunk(
    py: Python<'_>,
    chunk: PyChunk,
    source: &Bound<'_, PyAny>,
    k: usize,
    tile: usize,
    population_mode: &str,
) -> PyResult<PyChunkScore> {
    let source = source_of(source)?;
    let mode: PopulationMode = population_mode.parse().map_err(to_py)?;
    let score = py
        .detach(|| depscore::score_chunk_streaming(&chunk.inner, &source, k, tile, mode))
        .map_err(to_py)?;
    Ok(PyChunkScore::from_core(score))
}

/// `(doc_id, chunk_index, category, lds_t, rank)`
type ManifestRow = (String, u32, String, f64, usize);

/// Selects chunks under per-category budgets such as `{"book": "chunks:10"}`.
/// Returns `(doc_id, chunk_index, category, lds_t, rank)` tuples in manifest order.
#[pyfunction]
#[pyo3(signature = (scores, budgets, alpha = selector::DEFAULT_ALPHA, standardization = "per-category"))]
fn select(
    scores: Vec<PyChunkScore>,
    budgets: BTreeMap<String, String>,
    alpha: f64,
    standardization: &str,
) -> PyResult<Vec<ManifestRow>> {
    let standardization: Standardization = standardization.parse().map_err(to_py)?;
    let scores = scores.iter().map(PyChunkScore::to_core).collect::<PyResult<Vec<_>>>()?;
    let budgets = budgets
        .iter()
        .map(|(c, b)| Ok((parse::<Category>(c, "category")?, b.parse::<Budget>().map_err(to_py)?)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let table = ScoreTable::new(scores, alpha, standardization).map_err(to_py)?;
    let manifest = selector::select(&table, &budgets).map_err(to_py)?;
    Ok(manifest
        .selected
        .into_iter()
        .map(|s| (s.doc_id, s.chunk_index, s.category.as_str().to_string(), s.lds_t, s.rank))
        .collect())
}

#[pymodule]
fn longattn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LongAttnError", m.py().get_type::<LongAttnError>())?;
    m.add_class::<PyChunk>()?;
    m.add_class::<PyChunkScore>()?;
    m.add_class::<PyScoringModel>()?;
    m.add_function(wrap_pyfunction!(sliding_window_sample, m)?)?;
    m.add_function(wrap_pyfunction!(m_t_entry_count, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(ds_t_from_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(du_t_from_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(zscore, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(write_chunks, m)?)?;
    m.add_function(wrap_pyfunction!(read_chunks, m)?)?;
    m.add_function(wrap_pyfunction!(score_chunk, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    Ok(())
}
