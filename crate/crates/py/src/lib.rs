//! Python module `topicsum_py`.
//!
//! Structured values (configs, reports, corpora) cross the boundary as plain
//! dicts and lists via JSON.

pub mod ops;

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;
use serde_json::Value;

use topicsum::corpus::{synth_corpus as synth, SynthConfig};
use topicsum::decode::{beam_search, BigramModel, DecodeConfig};
use topicsum::lda::{self, LdaConfig, TopicModel};
use topicsum::pipeline::{self, RunConfig};

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_value(obj: Option<&Bound<'_, PyAny>>) -> PyResult<Option<Value>> {
    let Some(obj) = obj else { return Ok(None) };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map(Some).map_err(py_err)
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(py_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Fitted LDA model.
#[pyclass(name = "TopicModel", module = "topicsum_py")]
struct PyTopicModel {
    inner: TopicModel,
}

#[pymethods]
impl PyTopicModel {
    /// Collapsed Gibbs training on documents of word ids in `0..num_words`.
    #[staticmethod]
    #[pyo3(signature = (docs, num_words, config=None))]
    fn train(docs: Vec<Vec<usize>>, num_words: usize, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: LdaConfig = ops::merge_config(to_value(config)?).map_err(py_err)?;
        let inner = lda::train_gibbs(&docs, num_words, &cfg).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Returns the model and the vocabulary hash stored with it.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, String)> {
        let (inner, hash) = TopicModel::load(&path).map_err(py_err)?;
        Ok((Self { inner }, hash))
    }

    fn save(&self, path: PathBuf, vocab_hash: &str) -> PyResult<()> {
        self.inner.save(&path, vocab_hash).map_err(py_err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn num_words(&self) -> usize {
        self.inner.num_words()
    }

    /// Topic-word distributions, one row per topic.
    fn phi(&self) -> Vec<Vec<f64>> {
        (0..self.inner.k()).map(|t| self.inner.phi_row(t).to_vec()).collect()
    }

    /// `(theta, fallback)` for an unseen document.
    fn fold_in(&self, doc: Vec<usize>) -> (Vec<f64>, bool) {
        let mix = lda::fold_in(&self.inner, &doc, &self.inner.config);
        (mix.theta, mix.fallback)
    }

    fn top_words(&self, topic: usize, n: usize) -> PyResult<Vec<usize>> {
        if topic >= self.inner.k() {
            return Err(py_err(format!("topic {topic} out of range")));
        }
        Ok(self.inner.top_words(topic, n))
    }

    fn neg_log_likelihood(&self) -> PyResult<f64> {
        self.inner.neg_log_likelihood().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("TopicModel(k={}, num_words={})", self.inner.k(), self.inner.num_words())
    }
}

/// Trains one model per candidate K; returns `(selection, best_model)`.
#[pyfunction]
#[pyo3(signature = (docs, num_words, candidates, config=None))]
fn select_k<'py>(
    py: Python<'py>,
    docs: Vec<Vec<usize>>,
    num_words: usize,
    candidates: Vec<usize>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, PyTopicModel)> {
    let cfg: LdaConfig = ops::merge_config(to_value(config)?).map_err(py_err)?;
    let (sel, inner) = lda::select_k(&docs, num_words, &candidates, &cfg).map_err(py_err)?;
    Ok((to_py(py, &sel)?, PyTopicModel { inner }))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    topicsum::corpus::tokenize(text)
}

/// `{"rouge1": {...}, "rouge2": {...}, "rouge_l": {...}}` with precision, recall, f1.
#[pyfunction]
fn rouge<'py>(py: Python<'py>, candidate: &str, reference: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ops::rouge_text(candidate, reference))
}

/// Standard cross-attention; returns `(context, weights)`.
#[pyfunction]
#[pyo3(signature = (q, k, v, pad_mask=None))]
fn cross_attention(q: ops::Rows, k: ops::Rows, v: ops::Rows, pad_mask: Option<Vec<bool>>) -> PyResult<(ops::Rows, ops::Rows)> {
    let mask = pad_mask.unwrap_or_else(|| vec![false; k.len()]);
    ops::attention(&q, &k, &v, None, &mask).map_err(py_err)
}

/// Cross-attention averaged with `softmax(guidance)`; returns `(context, weights)`.
#[pyfunction]
#[pyo3(signature = (q, k, v, guidance, pad_mask=None))]
fn topical_attention(
    q: ops::Rows,
    k: ops::Rows,
    v: ops::Rows,
    guidance: Vec<f64>,
    pad_mask: Option<Vec<bool>>,
) -> PyResult<(ops::Rows, ops::Rows)> {
    let mask = pad_mask.unwrap_or_else(|| vec![false; k.len()]);
    ops::attention(&q, &k, &v, Some(&guidance), &mask).map_err(py_err)
}

/// Beam search over a first-order toy model given start and transition logits.
#[pyfunction]
#[pyo3(signature = (start, table, eos, config=None))]
fn beam_search_bigram<'py>(
    py: Python<'py>,
    start: Vec<f64>,
    table: Vec<Vec<f64>>,
    eos: usize,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: DecodeConfig = ops::merge_config(to_value(config)?).map_err(py_err)?;
    let model = BigramModel::new(&start, &table, eos).map_err(py_err)?;
    let hyp = beam_search(&model, &cfg).map_err(py_err)?;
    to_py(py, &hyp)
}

/// Synthetic topic corpus as `{"examples": [...], "labels": {...}}`.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn synth_corpus<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: SynthConfig = ops::merge_config(to_value(config)?).map_err(py_err)?;
    let corpus = synth(&cfg).map_err(py_err)?;
    to_py(
        py,
        &serde_json::json!({ "examples": corpus.examples, "labels": corpus.labels }),
    )
}

/// Runs the end-to-end pipeline from a JSON config file and returns the manifest.
#[pyfunction]
#[pyo3(signature = (config_path, seed=None, output_dir=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig::load(&config_path).map_err(py_err)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let manifest = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(py_err)?;
    to_py(py, &manifest)
}

#[pymodule]
fn topicsum_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTopicModel>()?;
    m.add_function(wrap_pyfunction!(select_k, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(rouge, m)?)?;
    m.add_function(wrap_pyfunction!(cross_attention, m)?)?;
    m.add_function(wrap_pyfunction!(topical_attention, m)?)?;
    m.add_function(wrap_pyfunction!(beam_search_bigram, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
